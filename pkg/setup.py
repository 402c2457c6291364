import os
from setuptools import setup


def setup_package():
    # Extra optional dependencies
    docs_extras = ["sphinx", "sphinx_rtd_theme", "numpydoc"]
    test_extras = ["pytest"]
    dev_extras = docs_extras + test_extras

    metadata = dict(
        name="pyspc",
        description="Coded illumination and compressive histograms for single-photon depth imaging",
        long_description=long_description(),
        long_description_content_type="text/x-rst",
        setup_requires=[
            "setuptools>=62",
            "setuptools_scm[toml]>=8.0",
        ],
        install_requires=[
            "numpy",
            "scipy",
            "pandas",
            "networkx",
            "tables",
            "packaging",
            "matplotlib",
        ],
        extras_require={
            "docs": docs_extras,
            "test": test_extras,
            "dev": dev_extras,
        },
        packages=[
            "pyspc",
            "pyspc.evaluation",
            "pyspc.optimisation",
            "pyspc.utils",
        ],
        entry_points={"console_scripts": ["pyspc=pyspc.cli:main"]},
        python_requires=">=3.8",
        use_scm_version=True,
    )

    setup(**metadata)


def long_description():
    with open(os.path.join(os.path.dirname(__file__), "README.rst")) as f:
        return f.read()


if __name__ == "__main__":
    setup_package()
