"""Small fully connected networks with hand-written backprop and Adam.

Everything runs in float64.  A network is a stack of affine layers with
ReLU between them and either a linear output or a tanh squash that is
rescaled into an action box.
"""
import numpy as np

from .errors import NumericError

# keeps squashed outputs strictly inside the box even when tanh saturates
_SHRINK = 1.0 - 1e-9


class Mlp:
    """Multi-layer perceptron ``sizes[0] -> ... -> sizes[-1]``.

    Parameters
    ----------
    sizes : sequence of int
        Input width, hidden widths, output width.
    output : {"linear", "squash"}
        Output activation.  ``"squash"`` maps tanh into ``[low, high]``.
    low, high : array-like, optional
        Box bounds, required for ``"squash"``.
    rng : numpy.random.Generator, optional
        Used for the uniform +-1/sqrt(fan_in) initialisation.  Without a
        generator every parameter starts at zero.
    """

    def __init__(self, sizes, output="linear", low=None, high=None, rng=None):
        sizes = [int(n) for n in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        if output not in ("linear", "squash"):
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = sizes
        self.output = output
        if output == "squash":
            if low is None or high is None:
                raise ValueError("squash output needs low/high bounds")
            low = np.broadcast_to(np.asarray(low, dtype=np.float64), (sizes[-1],)).copy()
            high = np.broadcast_to(np.asarray(high, dtype=np.float64), (sizes[-1],)).copy()
            if np.any(high <= low):
                raise ValueError("action box must have high > low")
            self.mid = 0.5 * (high + low)
            self.half = 0.5 * (high - low)
        self.low, self.high = low, high

        shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        self.shapes = shapes
        self.flat = np.zeros(sum(int(np.prod(sh)) for sh in shapes))
        self.params = self._views(self.flat)
        if rng is not None:
            for i, fan_in in enumerate(sizes[:-1]):
                bound = 1.0 / np.sqrt(fan_in)
                W, b = self.params[2 * i], self.params[2 * i + 1]
                W[...] = rng.uniform(-bound, bound, size=W.shape)
                b[...] = rng.uniform(-bound, bound, size=b.shape)

    def _views(self, flat):
        """Parameter-shaped views into one contiguous vector."""
        if getattr(self, "_layout", None) is None:
            layout, k = [], 0
            for sh in self.shapes:
                n = int(np.prod(sh))
                layout.append((k, k + n, sh))
                k += n
            self._layout = layout
        return [flat[a:b].reshape(sh) for a, b, sh in self._layout]

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"input-shape error: expected width {self.in_dim}, got shape {np.shape(x)}")
        return x, single

    def forward_cache(self, x):
        """Forward pass that also returns the activations needed by backward."""
        h, single = self._as_batch(x)
        acts = [h]
        n = self.n_layers
        for i in range(n):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n - 1:
                h = np.maximum(z, 0.0)
            elif self.output == "squash":
                h = np.tanh(z)
            else:
                h = z
            acts.append(h)
        y = acts[-1]
        if self.output == "squash":
            y = self.mid + self.half * _SHRINK * y
        return (y[0] if single else y), (acts, single)

    def forward(self, x):
        return self.forward_cache(x)[0]

    __call__ = forward

    def backward(self, x, upstream, cache=None, param_grads=True, flat=False, input_grad=True):
        """Gradients of ``<upstream, forward(x)>``.

        Returns ``(grads, dx)`` where ``grads`` lines up with ``self.params``
        (``None`` when ``param_grads`` is false) and ``dx`` has the shape of
        ``x``.  For a batch the parameter gradients are summed over rows.
        With ``flat=True`` the parameter gradient comes back as one vector
        laid out like ``self.flat``.  ``input_grad=False`` skips ``dx``
        (returned as ``None``).
        """
        if cache is None:
            _, cache = self.forward_cache(x)
        acts, single = cache
        g = np.asarray(upstream, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ValueError(f"upstream shape {np.shape(upstream)} does not match output")

        if self.output == "squash":
            g = g * (self.half * _SHRINK) * (1.0 - acts[-1] ** 2)

        gflat = grads = None
        if param_grads:
            gflat = np.empty_like(self.flat)
            grads = self._views(gflat)
        for i in reversed(range(self.n_layers)):
            W = self.params[2 * i]
            if param_grads:
                np.matmul(acts[i].T, g, out=grads[2 * i])
                np.sum(g, axis=0, out=grads[2 * i + 1])
            if i == 0 and not input_grad:
                g = None
                break
            g = g @ W.T
            if i > 0:
                g = g * (acts[i] > 0.0)
        if g is not None and single:
            g = g[0]
        return (gflat if flat else grads), g

    def get_flat(self):
        return self.flat.copy()

    def set_flat(self, flat):
        self.flat[...] = flat

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.__dict__.update(self.__dict__)
        other.flat = self.flat.copy()
        other.params = other._views(other.flat)
        return other


class Adam:
    """Adam with bias correction, updating a list of arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient passed to Adam")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        return self.m + self.v

    def load_state_arrays(self, arrays, t):
        n = len(self.params)
        for dst, src in zip(self.m + self.v, arrays[:2 * n]):
            dst[...] = src
        self.t = int(t)

