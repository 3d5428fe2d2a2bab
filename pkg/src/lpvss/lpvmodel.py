"""Simulatable LPV models.

``LpvSsModel`` realizes

    x_{t+1} = A(p_t) x_t + B(p_t) u_t + b_x(p_t)
    y_t     = C(p_t) x_t + D(p_t) u_t + b_y(p_t)

with the coefficients produced by a scheduling map (MLP or affine) and, for
the ``contracting`` and ``lipschitz`` variants, routed through the Cayley
parametrizations in :mod:`lpvss.ssparam`. ``LpvLfrModel`` is the
unconstrained LPV-LFR baseline with a ReLU feedback channel.

All parameters live in ``model.params`` (name -> 2-D float64 array). Graph
construction takes a dict of autodiff Vars with the same keys, so the same
code serves training (parameters as tape leaves) and plain evaluation.
Matrix-valued outputs of a scheduling map are vectorized column-major.
"""

import json
import zlib

import numpy as np

from . import autodiff as ad
from . import ssparam
from .autodiff import Tape
from .errors import CorruptFile, FormatVersionMismatch, NonFiniteState, ShapeMismatch
from .ssparam import LipschitzDims

BLOWUP = 1e30
INIT_RANGE = 0.1
VARIANTS = ("contracting", "lipschitz", "affine")


def unvec(flat, rows, cols):
    """Column-major inverse of Vec on a Var of shape ``(..., rows*cols, 1)``."""
    lead = flat.shape[:-2]
    return flat.reshape(lead + (cols, rows)).T


def vec(mat):
    """Column-major Vec of an array ``(..., r, c)`` -> ``(..., r*c, 1)``."""
    mat = np.asarray(mat)
    lead = mat.shape[:-2]
    return np.swapaxes(mat, -1, -2).reshape(lead + (-1, 1))


class Mlp:
    """Feedforward network acting on column vectors ``(..., n_in, 1)``.

    ReLU on hidden layers, linear output layer.
    """

    def __init__(self, widths):
        self.widths = list(widths)

    @property
    def n_out(self):
        return self.widths[-1]

    def param_shapes(self, prefix):
        shapes = {}
        for k, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            shapes[f"{prefix}W{k}"] = (b, a)
            shapes[f"{prefix}b{k}"] = (b, 1)
        return shapes

    def apply(self, leaves, prefix, h):
        lead = h.shape[:-2]
        h = _to_columns(h)
        n_layers = len(self.widths) - 1
        for k in range(n_layers):
            W = leaves[f"{prefix}W{k}"]
            b = leaves[f"{prefix}b{k}"]
            z = W @ h
            h = z + b.broadcast_to(z.shape)
            if k < n_layers - 1:
                h = h.relu()
        return _from_columns(h, lead)


def _to_columns(v):
    # (..., n, 1) -> (n, N): one GEMM per layer instead of N tiny products
    return v.reshape(-1, v.shape[-2]).T


def _from_columns(v, lead):
    return v.T.reshape(lead + (v.shape[0], 1))


class MlpScheduleMap:
    """Scheduling map built from MLPs.

    ``mode="per-component"`` uses one network per output component,
    ``mode="trunk"`` a single network whose output is split by offsets.
    """

    kind = "mlp"

    def __init__(self, n_p, outputs, hidden=(50, 50), mode="per-component"):
        if mode not in ("per-component", "trunk"):
            raise ValueError(f"unknown mlp mode {mode!r}")
        self.n_p = n_p
        self.outputs = {k: int(v) for k, v in outputs.items() if int(v) > 0}
        self.hidden = tuple(hidden)
        self.mode = mode
        if mode == "trunk":
            self.nets = {"": Mlp([n_p, *self.hidden, sum(self.outputs.values())])}
        else:
            self.nets = {f"{k}.": Mlp([n_p, *self.hidden, n]) for k, n in self.outputs.items()}

    def config(self):
        return {"kind": self.kind, "hidden": list(self.hidden), "mode": self.mode}

    def param_shapes(self, prefix="phi."):
        shapes = {}
        for name, net in self.nets.items():
            shapes.update(net.param_shapes(prefix + name))
        return shapes

    def apply(self, leaves, p, prefix="phi."):
        if self.mode == "per-component":
            return {k: self.nets[f"{k}."].apply(leaves, f"{prefix}{k}.", p) for k in self.outputs}
        flat = self.nets[""].apply(leaves, prefix, p)
        return _split_flat(flat, self.outputs)


class AffineScheduleMap:
    """``S1 p + S0``, split into the named output components."""

    kind = "affine"

    def __init__(self, n_p, outputs, **_):
        self.n_p = n_p
        self.outputs = {k: int(v) for k, v in outputs.items() if int(v) > 0}

    @property
    def output_dim(self):
        return sum(self.outputs.values())

    def config(self):
        return {"kind": self.kind}

    def param_shapes(self, prefix="phi."):
        return {f"{prefix}S1": (self.output_dim, self.n_p), f"{prefix}S0": (self.output_dim, 1)}

    def apply(self, leaves, p, prefix="phi."):
        lead = p.shape[:-2]
        z = leaves[f"{prefix}S1"] @ _to_columns(p)
        flat = z + leaves[f"{prefix}S0"].broadcast_to(z.shape)
        return _split_flat(_from_columns(flat, lead), self.outputs)


def _split_flat(flat, outputs):
    out, off = {}, 0
    for k, n in outputs.items():
        out[k] = flat[..., off:off + n, :]
        off += n
    return out


def make_schedule_map(n_p, outputs, spec):
    spec = dict(spec or {"kind": "mlp"})
    kind = spec.pop("kind", "mlp")
    if kind == "mlp":
        return MlpScheduleMap(n_p, outputs, **spec)
    if kind == "affine":
        return AffineScheduleMap(n_p, outputs)
    raise ValueError(f"unknown scheduling map kind {kind!r}")


def _init_params(shapes, rng):
    return {k: rng.uniform(-INIT_RANGE, INIT_RANGE, size=s) for k, s in shapes.items()}


class _ModelBase:
    params: dict

    def leaves(self, tape, trainable=True):
        make = tape.param if trainable else tape.const
        return {k: make(v) for k, v in self.params.items()}

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params):
        for k, v in params.items():
            if self.params[k].shape != np.shape(v):
                raise ShapeMismatch(f"parameter {k}: shape {np.shape(v)} != {self.params[k].shape}")
            self.params[k] = np.array(v, dtype=np.float64)

    def n_params(self):
        return sum(v.size for v in self.params.values())

    def simulate(self, x0, u, p):
        """Simulate one trajectory (``u``: T x n_u) or a batch (B x T x n_u).

        Returns ``(y, x)`` with ``x`` holding ``T + 1`` states. Raises
        :class:`NonFiniteState` when a state entry exceeds ``1e30``; the
        exception's ``prefix`` carries the outputs computed before that.
        """
        u = np.asarray(u, dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        x0 = np.asarray(x0, dtype=np.float64)
        single = u.ndim == 2
        if single:
            u, p, x0 = u[None], p[None], x0[None]
        if u.shape[:2] != p.shape[:2]:
            raise ShapeMismatch("u and p must have the same batch and length")
        try:
            y, x = self._simulate_batch(x0, u, p)
        except NonFiniteState as exc:
            if single and exc.prefix is not None:
                exc.prefix = exc.prefix[0]
            raise
        return (y[0], x[0]) if single else (y, x)

    def rollout_op(self, leaves, x0, u, p):
        raise NotImplementedError

    def _simulate_batch(self, x0, u, p):
        raise NotImplementedError


def _check_state(x, t, ys):
    if not np.all(np.abs(x) <= BLOWUP):
        prefix = np.stack(ys, axis=1) if ys else None
        raise NonFiniteState(t, prefix=prefix)


class LpvSsModel(_ModelBase):
    """LPV state-space model with a learned scheduling dependency.

    Parameters
    ----------
    variant : {"contracting", "lipschitz", "affine"}
        ``affine`` is the unconstrained model whose ``Vec(W)`` and bias are
        produced directly by the scheduling map.
    coeff : dict
        Scheduling-map spec, e.g. ``{"kind": "mlp", "hidden": [50, 50],
        "mode": "per-component"}`` or ``{"kind": "affine"}``.
    """

    def __init__(self, variant, n_x, n_u, n_y, n_p, coeff=None, epsilon=ssparam.DEFAULT_EPSILON,
                 gamma=1.0, fixed_alpha=None, seed=0, params=None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.n_x, self.n_u, self.n_y, self.n_p = n_x, n_u, n_y, n_p
        self.epsilon = float(epsilon)
        self.gamma = float(gamma)
        self.fixed_alpha = fixed_alpha
        self.seed = int(seed)
        self.coeff_spec = dict(coeff or {"kind": "mlp", "hidden": [50, 50], "mode": "per-component"})
        self.lip_dims = LipschitzDims(n_x, n_u, n_y)
        self.schedule = make_schedule_map(n_p, self._outputs(), self.coeff_spec)

        rng = np.random.default_rng(self.seed)
        shapes = self.param_shapes()
        init = _init_params(shapes, rng)
        if variant != "affine":
            init["d"] = np.zeros((n_x, 1))
        if variant == "contracting":
            init["alpha_raw"] = np.zeros((1, 1))
        self.params = init
        if params is not None:
            self.set_params(params)

    @property
    def dims(self):
        return (self.n_x, self.n_u, self.n_y, self.n_p)

    def _outputs(self):
        n_x, n_u, n_y = self.n_x, self.n_u, self.n_y
        bias = {"b": n_x + n_y}
        if self.variant == "affine":
            return {"W": (n_x + n_y) * (n_x + n_u), **bias}
        if self.variant == "contracting":
            return {"X": n_x * n_x, "Y": n_x * n_x, "B": n_x * n_u, "C": n_y * n_x,
                    "D": n_y * n_u, **bias}
        n, n0 = self.lip_dims.n, self.lip_dims.n0
        return {"X": n * n, "Y": n * n, "Z": n0 * n, **bias}

    def param_shapes(self):
        shapes = {}
        if self.variant != "affine":
            shapes["d"] = (self.n_x, 1)
            shapes["Ycal"] = (self.n_x, self.n_x)
        if self.variant == "contracting":
            shapes["alpha_raw"] = (1, 1)
        shapes.update(self.schedule.param_shapes())
        return shapes

    def config(self):
        return {
            "kind": "lpvss", "variant": self.variant, "n_x": self.n_x, "n_u": self.n_u,
            "n_y": self.n_y, "n_p": self.n_p, "coeff": self.coeff_spec, "epsilon": self.epsilon,
            "gamma": self.gamma, "fixed_alpha": self.fixed_alpha, "seed": self.seed,
        }

    # guarantees --------------------------------------------------------
    @property
    def alpha(self):
        """Contraction rate of the contracting variant."""
        if self.variant != "contracting":
            return None
        return self.contracting_param().alpha

    def contracting_param(self):
        return ssparam.ContractingParam(
            self.params["d"], self.params["Ycal"], float(self.params["alpha_raw"][0, 0]),
            self.epsilon, self.fixed_alpha,
        )

    def metric(self):
        """Certificate matrix ``Q Lambda^2 Q^T`` (constrained variants only)."""
        if self.variant == "affine":
            return None
        return ssparam.metric_matrix(self.params["d"], self.params["Ycal"])

    # graph -------------------------------------------------------------
    def coefficients_op(self, leaves, p):
        """``(A, B, C, D, b_x, b_y)`` Vars for scheduling Var ``p`` of shape ``(..., n_p, 1)``."""
        n_x, n_u, n_y = self.n_x, self.n_u, self.n_y
        phi = self.schedule.apply(leaves, p)
        b = phi["b"]
        bx, by = b[..., :n_x, :], b[..., n_x:, :]
        if self.variant == "affine":
            W = unvec(phi["W"], n_x + n_y, n_x + n_u)
            A, B, C, D = ssparam.split_W(W, n_x, n_u)
            return A, B, C, D, bx, by
        if self.variant == "contracting":
            alpha = ssparam.alpha_op(leaves["alpha_raw"], self.fixed_alpha)
            A = ssparam.contracting_A_op(
                leaves["d"], leaves["Ycal"], alpha,
                unvec(phi["X"], n_x, n_x), unvec(phi["Y"], n_x, n_x), self.epsilon,
            )
            return (A, unvec(phi["B"], n_x, n_u), unvec(phi["C"], n_y, n_x),
                    unvec(phi["D"], n_y, n_u), bx, by)
        n, n0 = self.lip_dims.n, self.lip_dims.n0
        Z = unvec(phi["Z"], n0, n) if n0 > 0 else None
        W = ssparam.lipschitz_W_op(
            leaves["d"], leaves["Ycal"], unvec(phi["X"], n, n), unvec(phi["Y"], n, n), Z,
            self.gamma, self.epsilon, self.lip_dims,
        )
        A, B, C, D = ssparam.split_W(W, n_x, n_u)
        return A, B, C, D, bx, by

    def coefficients(self, p):
        """Numeric ``(A, B, C, D, b_x, b_y)`` for ``p`` of shape ``(n_p,)`` or ``(..., n_p)``."""
        p = np.asarray(p, dtype=np.float64)
        tape = Tape()
        out = self.coefficients_op(self.leaves(tape, trainable=False), tape.const(p[..., None]))
        return tuple(v.value for v in out)

    def W(self, p):
        A, B, C, D, _, _ = self.coefficients(p)
        return np.concatenate([np.concatenate([A, B], -1), np.concatenate([C, D], -1)], -2)

    def rollout_op(self, leaves, x0, u, p):
        """Differentiable simulation.

        ``x0``: Var ``(B, n_x, 1)``; ``u``, ``p``: Vars ``(B, T, n, 1)``.
        Returns ``(y, xs)`` with ``y`` of shape ``(B, T, n_y, 1)``.
        """
        A, B, C, D, bx, by = self.coefficients_op(leaves, p)
        Bu = B @ u
        drive = Bu + bx
        T = u.shape[1]
        x = x0
        xs = [x]
        for t in range(T):
            Ax = A[:, t] @ x
            x = Ax + drive[:, t]
            _check_state(x.value, t + 1, [])
            xs.append(x)
        states = ad.stack(xs, axis=1)
        Cx = C @ states[:, :T]
        Du = D @ u
        y = Cx + Du + by
        return y, states

    def _simulate_batch(self, x0, u, p):
        A, B, C, D, bx, by = self.coefficients(p)
        drive = (B @ u[..., None])[..., 0] + bx[..., 0]
        feed = (D @ u[..., None])[..., 0] + by[..., 0]
        nb, T = u.shape[:2]
        x = x0.copy()
        xs, ys = [x], []
        for t in range(T):
            ys.append(np.einsum("bij,bj->bi", C[:, t], x) + feed[:, t])
            x = np.einsum("bij,bj->bi", A[:, t], x) + drive[:, t]
            _check_state(x, t + 1, ys)
            xs.append(x)
        return np.stack(ys, axis=1), np.stack(xs, axis=1)


class LpvLfrModel(_ModelBase):
    """Affine LPV-LFR baseline with ReLU feedback ``w_t = relu(z_t)``.

    The ``z`` row has no direct feedthrough from ``w``, so the recursion is
    explicit.
    """

    variant = "lfr"

    def __init__(self, n_x, n_u, n_y, n_p, n_w=100, seed=0, params=None):
        self.n_x, self.n_u, self.n_y, self.n_p, self.n_w = n_x, n_u, n_y, n_p, n_w
        self.seed = int(seed)
        self.schedule = AffineScheduleMap(n_p, self._outputs())
        rng = np.random.default_rng(self.seed)
        self.params = _init_params(self.schedule.param_shapes(), rng)
        if params is not None:
            self.set_params(params)

    @property
    def dims(self):
        return (self.n_x, self.n_u, self.n_y, self.n_p)

    _BLOCKS = ("A", "Bw", "Bu", "Cz", "Dzu", "Cy", "Dyw", "Dyu", "bx", "bz", "by")

    def _shapes(self):
        n_x, n_u, n_y, n_w = self.n_x, self.n_u, self.n_y, self.n_w
        return {
            "A": (n_x, n_x), "Bw": (n_x, n_w), "Bu": (n_x, n_u),
            "Cz": (n_w, n_x), "Dzu": (n_w, n_u),
            "Cy": (n_y, n_x), "Dyw": (n_y, n_w), "Dyu": (n_y, n_u),
            "bx": (n_x, 1), "bz": (n_w, 1), "by": (n_y, 1),
        }

    def _outputs(self):
        return {k: r * c for k, (r, c) in self._shapes().items()}

    def config(self):
        return {"kind": "lfr", "variant": "lfr", "n_x": self.n_x, "n_u": self.n_u,
                "n_y": self.n_y, "n_p": self.n_p, "n_w": self.n_w, "seed": self.seed}

    def metric(self):
        return None

    def blocks_op(self, leaves, p):
        flat = self.schedule.apply(leaves, p)
        return {k: unvec(flat[k], *s) for k, s in self._shapes().items()}

    def blocks(self, p):
        p = np.asarray(p, dtype=np.float64)
        tape = Tape()
        out = self.blocks_op(self.leaves(tape, trainable=False), tape.const(p[..., None]))
        return {k: v.value for k, v in out.items()}

    def rollout_op(self, leaves, x0, u, p):
        m = self.blocks_op(leaves, p)
        ez = m["Dzu"] @ u + m["bz"]
        ex = m["Bu"] @ u + m["bx"]
        T = u.shape[1]
        x = x0
        xs, ws = [x], []
        for t in range(T):
            w = (m["Cz"][:, t] @ x + ez[:, t]).relu()
            x = m["A"][:, t] @ x + m["Bw"][:, t] @ w + ex[:, t]
            _check_state(x.value, t + 1, [])
            xs.append(x)
            ws.append(w)
        states = ad.stack(xs, axis=1)
        y = m["Cy"] @ states[:, :T] + m["Dyw"] @ ad.stack(ws, axis=1) + m["Dyu"] @ u + m["by"]
        return y, states

    def _simulate_batch(self, x0, u, p):
        m = self.blocks(p)
        uu = u[..., None]
        ez = (m["Dzu"] @ uu + m["bz"])[..., 0]
        ex = (m["Bu"] @ uu + m["bx"])[..., 0]
        ey = (m["Dyu"] @ uu + m["by"])[..., 0]
        T = u.shape[1]
        x = x0.copy()
        xs, ys = [x], []
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(T):
                w = np.maximum(np.einsum("bij,bj->bi", m["Cz"][:, t], x) + ez[:, t], 0.0)
                ys.append(np.einsum("bij,bj->bi", m["Cy"][:, t], x)
                          + np.einsum("bij,bj->bi", m["Dyw"][:, t], w) + ey[:, t])
                x = (np.einsum("bij,bj->bi", m["A"][:, t], x)
                     + np.einsum("bij,bj->bi", m["Bw"][:, t], w) + ex[:, t])
                _check_state(x, t + 1, ys)
                xs.append(x)
        return np.stack(ys, axis=1), np.stack(xs, axis=1)


# ---------------------------------------------------------------------------
# model files

MAGIC = "LPVSS1"
FORMAT_VERSION = 1


def model_from_config(config, params=None):
    config = dict(config)
    kind = config.pop("kind")
    if kind == "lpvss":
        return LpvSsModel(**config, params=params)
    if kind == "lfr":
        config.pop("variant", None)
        return LpvLfrModel(**config, params=params)
    raise CorruptFile(f"unknown model kind {kind!r}")


def dumps_model(model):
    """Serialize to the ``LPVSS1`` text container.

    Layout: magic line, ``format_version = N``, ``crc32 = XXXXXXXX`` over the
    payload bytes, then a JSON payload with the model config and every
    parameter as ``{"shape": [r, c], "data": [...]}`` flattened column-major.
    """
    payload = {
        "config": model.config(),
        "params": {
            k: {"shape": list(v.shape), "data": v.flatten(order="F").tolist()}
            for k, v in model.params.items()
        },
    }
    body = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    crc = zlib.crc32(body.encode()) & 0xFFFFFFFF
    return f"{MAGIC}\nformat_version = {FORMAT_VERSION}\ncrc32 = {crc:08x}\n{body}"


def loads_model(text):
    lines = text.split("\n", 3)
    if len(lines) < 4 or lines[0] != MAGIC:
        raise CorruptFile("missing LPVSS1 header")
    try:
        version = int(lines[1].split("=", 1)[1])
        crc = int(lines[2].split("=", 1)[1], 16)
    except (IndexError, ValueError):
        raise CorruptFile("malformed header") from None
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"file version {version}, reader supports {FORMAT_VERSION}")
    body = lines[3]
    if zlib.crc32(body.encode()) & 0xFFFFFFFF != crc:
        raise CorruptFile("checksum mismatch")
    payload = json.loads(body)
    params = {
        k: np.array(v["data"], dtype=np.float64).reshape(v["shape"], order="F")
        for k, v in payload["params"].items()
    }
    return model_from_config(payload["config"], params=params)


def save_model(model, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model))


def load_model(path):
    with open(path, encoding="utf-8", newline="\n") as fh:
        return loads_model(fh.read())
