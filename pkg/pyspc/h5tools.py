import os

import numpy as np
import tables


class H5Store(object):
    """Thin wrapper around a PyTables file holding transient cubes.

    Parameters
    ----------
    filename : str, os.PathLike or tables.File
        Path to open, or an already open file (which is then not closed by the store).
    filter_kwds : dict or None
        Keyword arguments for `tables.Filters`, e.g. ``{"complevel": 5, "complib": "zlib"}``.
    mode : str
        File mode passed to `tables.open_file`.
    metadata : dict or None
        Attributes written to the root node when the file is writable.
    create_directories : bool
        Create missing parent directories of `filename`.
    """

    def __init__(
        self,
        filename,
        filter_kwds=None,
        mode="r",
        title="",
        metadata=None,
        create_directories=False,
    ):
        self._opened = False
        if isinstance(filename, (str, os.PathLike)):
            self.filename = filename
            if filter_kwds:
                self.filters = tables.Filters(**filter_kwds)
            else:
                self.filters = None

            if create_directories:
                directory = os.path.dirname(os.fspath(filename))
                if directory:
                    os.makedirs(directory, exist_ok=True)

            self.file = tables.open_file(
                filename, mode=mode, filters=self.filters, title=title
            )
            self._opened = True
        elif isinstance(filename, tables.File):
            self.file = filename
            assert self.file.isopen
            self.filename = self.file.filename
            self.filters = self.file.filters
            self._opened = False
        else:
            raise TypeError(
                f"{self.__class__.__name__} must be initialised with a filename to open or "
                f"an open tables.File"
            )

        if metadata is not None and self.file.mode != "r":
            for k, v in metadata.items():
                setattr(self.file.root._v_attrs, k, v)

    def __enter__(self):
        return self

    def __exit__(self, *args):
        self.close()

    def __del__(self):
        if self._opened and self.file.isopen:
            self.file.close()

    def close(self):
        if self._opened and self.file.isopen:
            self.file.close()

    def write_array(self, name, data, where="/", **attrs):
        """Store `data` as a chunked array node with optional attributes."""
        data = np.ascontiguousarray(data)
        node = self.file.create_carray(
            where,
            name,
            obj=data,
            filters=self.filters,
            createparents=True,
        )
        for k, v in attrs.items():
            setattr(node.attrs, k, v)
        return node

    def read_array(self, name, where="/"):
        """Return `(data, attrs)` for an array node."""
        node = self.file.get_node(where, name)
        attrs = {k: node.attrs[k] for k in node.attrs._v_attrnamesuser}
        return node.read(), attrs
