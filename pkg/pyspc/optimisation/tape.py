"""Reverse-mode gradient tape over the fixed training pipeline.

Each `Op` implements a forward evaluation and its hand-derived adjoint. A `Tape`
records applied operations as nodes of a `networkx.DiGraph` (edges run from inputs
to outputs) and the backward pass walks the graph in reverse topological order,
accumulating gradients into the leaf variables.

Batched operations use shape (J, N) for J depth samples of N bins, the coding
matrix D is (K, N) and the coded values B are (J, K).
"""

import logging

import networkx as nx
import numpy as np
from scipy.special import softmax

from ..codes import DEGENERATE_TOL
from ..core import circular_convolve, circular_correlate, clamp_peak
from .losses import circular_l1, circular_l1_grad, tv_penalty, tv_penalty_grad

logger = logging.getLogger(__name__)

# Floor on r inside the noise layer's gradient.
SQRT_GUARD = 1e-6


class Variable:
    """A value recorded on a tape."""

    __slots__ = ("tape", "name", "value")

    def __init__(self, tape, name, value):
        self.tape = tape
        self.name = name
        self.value = value

    def __repr__(self):
        return f'<Variable "{self.name}" shape={np.shape(self.value)}>'


class Op:
    """Base class for pipeline operations.

    `backward` receives the gradient of the final output with respect to this
    operation's output, the output value and the input values, and returns one
    gradient (or None) per input.
    """

    name = "op"

    def forward(self, *values):
        raise NotImplementedError()

    def backward(self, grad, out, *values):
        raise NotImplementedError()


class Tape:
    def __init__(self):
        self.graph = nx.DiGraph()
        self.backward_order = []

    def __len__(self):
        return self.graph.number_of_nodes()

    def _add_node(self, name, value, op=None, inputs=()):
        if name in self.graph:
            raise ValueError(f'A node named "{name}" is already on the tape.')
        self.graph.add_node(
            name, value=value, op=op, inputs=list(inputs), index=len(self.graph)
        )
        for inp in inputs:
            self.graph.add_edge(inp, name)
        return Variable(self, name, value)

    def variable(self, name, value) -> Variable:
        """Record a leaf (a parameter or constant input)."""
        return self._add_node(name, value)

    def apply(self, op: Op, *inputs: Variable, name=None) -> Variable:
        """Evaluate `op` on `inputs` and record it."""
        for inp in inputs:
            if inp.tape is not self:
                raise ValueError(f"{inp!r} belongs to a different tape.")
        out = op.forward(*[inp.value for inp in inputs])
        if name is None:
            name = f"{op.name}:{len(self.graph)}"
        return self._add_node(name, out, op=op, inputs=[inp.name for inp in inputs])

    def forward_order(self) -> list:
        return list(
            nx.lexicographical_topological_sort(
                self.graph, key=lambda n: self.graph.nodes[n]["index"]
            )
        )

    def leaves(self) -> list:
        return [n for n, attrs in self.graph.nodes(data=True) if attrs["op"] is None]

    def backward(self, output: Variable) -> dict:
        """Gradients of the scalar `output` with respect to every leaf.

        Leaves the output does not depend on get a gradient of None.
        """
        if np.ndim(output.value) != 0:
            raise ValueError("Backward pass needs a scalar output.")
        grads = {output.name: 1.0}
        self.backward_order = []
        for node in reversed(self.forward_order()):
            if node not in grads:
                continue
            self.backward_order.append(node)
            attrs = self.graph.nodes[node]
            op = attrs["op"]
            if op is None:
                continue
            values = [self.graph.nodes[inp]["value"] for inp in attrs["inputs"]]
            input_grads = op.backward(grads[node], attrs["value"], *values)
            for inp, g in zip(attrs["inputs"], input_grads):
                if g is None:
                    continue
                grads[inp] = grads[inp] + g if inp in grads else g
        return {leaf: grads.get(leaf) for leaf in self.leaves()}


class Exp(Op):
    """Elementwise exponential, mapping the log drive θ to f = exp(θ)."""

    name = "exp"

    def forward(self, x):
        return np.exp(x)

    def backward(self, grad, out, x):
        return (grad * out,)


class Clamp(Op):
    """Peak clamp with a straight-through gradient strictly inside (0, Φ^max).

    A bin sitting exactly on a bound also passes gradients that point back into
    the interval, so a projected iterate can leave the bound again.
    """

    name = "clamp"

    def __init__(self, phi_max):
        self.phi_max = phi_max

    def forward(self, f):
        return clamp_peak(f, self.phi_max)

    def backward(self, grad, out, f):
        mask = (f > 0) & (f < self.phi_max)
        mask |= (f == self.phi_max) & (grad > 0)
        mask |= (f == 0) & (grad < 0)
        return (grad * mask,)


class CircularConvolve(Op):
    """Convolution with a fixed kernel (the IRF)."""

    name = "convolve"

    def __init__(self, kernel):
        self.kernel = kernel

    def forward(self, x):
        return circular_convolve(x, self.kernel)

    def backward(self, grad, out, x):
        return (circular_correlate(grad, self.kernel),)


class Total(Op):
    name = "total"

    def forward(self, x):
        return float(np.sum(x))

    def backward(self, grad, out, x):
        return (np.full(np.shape(x), grad),)


class Divide(Op):
    """x / total for a scalar total."""

    name = "divide"

    def forward(self, x, total):
        return x / total

    def backward(self, grad, out, x, total):
        return grad / total, -float(np.sum(grad * out)) / total


class DeliveredFraction(Op):
    """ρ = min(1, Σs / Φ^sig); constant 1 when there is no peak limit."""

    name = "delivered"

    def __init__(self, phi_sig=None):
        self.phi_sig = phi_sig

    def forward(self, total):
        if self.phi_sig is None:
            return 1.0
        return min(1.0, total / self.phi_sig)

    def backward(self, grad, out, total):
        if self.phi_sig is None or total >= self.phi_sig:
            return (0.0,)
        return (grad / self.phi_sig,)


class ShiftBatch(Op):
    """Circular fractional shift of one waveform to J depths, giving (J, N)."""

    name = "shift"

    def __init__(self, depths, n):
        depths = np.mod(np.asarray(depths, dtype=np.float64), n)
        k = np.floor(depths).astype(np.int64)
        self.n = n
        self.weight = (depths - k)[:, np.newaxis]
        i = np.arange(n)
        self.idx0 = np.mod(i[np.newaxis, :] - k[:, np.newaxis], n)
        self.idx1 = np.mod(self.idx0 - 1, n)

    def forward(self, q):
        return (1.0 - self.weight) * q[self.idx0] + self.weight * q[self.idx1]

    def backward(self, grad, out, q):
        g = np.bincount(
            self.idx0.ravel(), weights=((1.0 - self.weight) * grad).ravel(), minlength=self.n
        )
        g += np.bincount(
            self.idx1.ravel(), weights=(self.weight * grad).ravel(), minlength=self.n
        )
        return (g,)


class Incident(Op):
    """r_j = Φ_j·ρ·x_j + Φ^bkg_j / N."""

    name = "incident"

    def __init__(self, phi_sig, phi_bkg):
        self.phi_sig = np.asarray(phi_sig, dtype=np.float64)[:, np.newaxis]
        self.phi_bkg = np.asarray(phi_bkg, dtype=np.float64)[:, np.newaxis]

    def forward(self, x, rho):
        n = x.shape[-1]
        return self.phi_sig * rho * x + self.phi_bkg / n

    def backward(self, grad, out, x, rho):
        return self.phi_sig * rho * grad, float(np.sum(self.phi_sig * x * grad))


class GaussianNoise(Op):
    """Reparameterised Poisson approximation y = r + √r·ε with ε ~ N(0, 1) pre-drawn."""

    name = "noise"

    def __init__(self, eps):
        self.eps = eps

    def forward(self, r):
        return r + np.sqrt(np.maximum(r, 0.0)) * self.eps

    def backward(self, grad, out, r):
        return (grad * (1.0 + self.eps / (2.0 * np.sqrt(np.maximum(r, SQRT_GUARD)))),)


class Encode(Op):
    """B = y·Dᵀ."""

    name = "encode"

    def forward(self, y, d):
        return y @ d.T

    def backward(self, grad, out, y, d):
        return grad @ d, grad.T @ y


class Template(Op):
    """D′ = D correlated row-wise with the unit-sum waveform q."""

    name = "template"

    def forward(self, d, q):
        return circular_correlate(d, q)

    def backward(self, grad, out, d, q):
        gd = circular_convolve(grad, q[np.newaxis, :])
        gq = circular_correlate(d, grad).sum(axis=0)
        return gd, gq


class ZeroMeanUnitNorm(Op):
    """Normalise to zero mean and unit L2 norm along `axis`; zero-variance slices become 0."""

    name = "normalise"

    def __init__(self, axis):
        self.axis = axis
        self.norms = None

    def forward(self, x):
        centred = x - x.mean(axis=self.axis, keepdims=True)
        norms = np.linalg.norm(centred, axis=self.axis, keepdims=True)
        self.norms = norms
        return np.divide(
            centred, norms, out=np.zeros_like(centred), where=norms > DEGENERATE_TOL
        )

    def backward(self, grad, out, x):
        norms = self.norms
        gc = grad - out * np.sum(out * grad, axis=self.axis, keepdims=True)
        gc = np.divide(gc, norms, out=np.zeros_like(gc), where=norms > DEGENERATE_TOL)
        return (gc - gc.mean(axis=self.axis, keepdims=True),)


class Scores(Op):
    """ZNCC scores Bn·D′n; degenerate (all zero) template columns score -inf."""

    name = "scores"

    def forward(self, bn, dn):
        scores = bn @ dn
        scores[:, ~np.any(dn != 0, axis=0)] = -np.inf
        return scores

    def backward(self, grad, out, bn, dn):
        grad = np.where(np.isfinite(out), grad, 0.0)
        return grad @ dn.T, bn.T @ grad


class Softargmax(Op):
    """Per row softargmax with the hard argmax rolled to the middle of the period."""

    name = "softargmax"

    def __init__(self, beta):
        self.beta = beta
        self.weights = None
        self.positions = None

    def forward(self, scores):
        n = scores.shape[-1]
        peak = np.argmax(scores, axis=-1)
        offset = n // 2 - peak
        # Position of original bin i after rolling the peak to N // 2.
        self.positions = np.mod(np.arange(n)[np.newaxis, :] + offset[:, np.newaxis], n)
        self.weights = softmax(self.beta * scores, axis=-1)
        return np.sum(self.weights * self.positions, axis=-1) - offset

    def backward(self, grad, out, scores):
        mean_pos = np.sum(self.weights * self.positions, axis=-1, keepdims=True)
        local = self.beta * self.weights * (self.positions - mean_pos)
        return (grad[:, np.newaxis] * local,)


class CircularL1(Op):
    name = "circular_l1"

    def __init__(self, target, n):
        self.target = np.asarray(target, dtype=np.float64)
        self.n = n

    def forward(self, estimate):
        return circular_l1(estimate, self.target, self.n)

    def backward(self, grad, out, estimate):
        return (grad * circular_l1_grad(estimate, self.target, self.n),)


class TotalVariation(Op):
    name = "tv"

    def forward(self, d):
        return tv_penalty(d)

    def backward(self, grad, out, d):
        return (grad * tv_penalty_grad(d),)


class WeightedSum(Op):
    name = "sum"

    def __init__(self, *weights):
        self.weights = weights

    def forward(self, *values):
        return sum(w * v for w, v in zip(self.weights, values))

    def backward(self, grad, out, *values):
        return tuple(w * grad for w in self.weights)
