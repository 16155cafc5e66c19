"""Small MLPs with a linear skip path, closed-form backprop, and Adam.

Every network in the solver is a single hidden ReLU layer plus a linear skip:

    y = W2 relu(W1 x + b1) + b2 + Wskip x

One independent copy lives at each physical time step, so exact gradients
(including the input divergence needed by the score-matching loss) are cheap
closed forms and a general autodiff engine buys nothing. The ReLU subgradient
at 0 is taken to be 0 throughout.
"""

import json
from dataclasses import dataclass, field

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wskip")


@dataclass
class Mlp:
    W1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (out, hidden)
    b2: np.ndarray  # (out,)
    Wskip: np.ndarray  # (out, in)

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "Mlp":
        return Mlp(*(getattr(self, name).copy() for name in PARAM_NAMES))


def init_mlp(in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator,
             skip_init: str = "identity") -> Mlp:
    """Uniform +-1/sqrt(fan_in) layers, zero biases, identity-padded skip.

    Score networks use `skip_init="zero"`: an identity skip makes the raw net
    grow like x, and a Langevin chain driven by such a score diverges
    geometrically before score matching can correct it.
    """
    if skip_init not in ("identity", "zero"):
        raise ValueError(f"unknown skip_init: {skip_init!r}")
    s1 = 1.0 / np.sqrt(in_dim)
    s2 = 1.0 / np.sqrt(hidden_dim)
    return Mlp(
        W1=rng.uniform(-s1, s1, size=(hidden_dim, in_dim)),
        b1=np.zeros(hidden_dim),
        W2=rng.uniform(-s2, s2, size=(out_dim, hidden_dim)),
        b2=np.zeros(out_dim),
        Wskip=np.eye(out_dim, in_dim) if skip_init == "identity" else np.zeros((out_dim, in_dim)),
    )


def _as_batch(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    X, single = _as_batch(x)
    if X.shape[1] != net.in_dim:
        raise ValueError(f"input dim {X.shape[1]} != network in_dim {net.in_dim}")
    z = X @ net.W1.T + net.b1
    y = np.maximum(z, 0.0) @ net.W2.T + net.b2 + X @ net.Wskip.T
    return y[0] if single else y


def backward(net: Mlp, x: np.ndarray, upstream: np.ndarray):
    """Gradients of sum_rows upstream . forward(net, x).

    Returns (param_grads, input_grad); param gradients are summed over the
    batch, the input gradient keeps one row per sample.
    """
    X, single = _as_batch(x)
    U, _ = _as_batch(upstream)
    if U.shape != (X.shape[0], net.out_dim):
        raise ValueError("upstream shape does not match batch/out_dim")
    z = X @ net.W1.T + net.b1
    a = np.maximum(z, 0.0)
    dz = (U @ net.W2) * (z > 0.0)
    grads = {
        "W1": dz.T @ X,
        "b1": dz.sum(axis=0),
        "W2": U.T @ a,
        "b2": U.sum(axis=0),
        "Wskip": U.T @ X,
    }
    dx = dz @ net.W1 + U @ net.Wskip
    return grads, (dx[0] if single else dx)


def divergence(net: Mlp, x: np.ndarray):
    """Exact trace of the input Jacobian; requires a square (d -> d) network."""
    if net.in_dim != net.out_dim:
        raise ValueError("divergence requires a square network")
    X, single = _as_batch(x)
    z = X @ net.W1.T + net.b1
    unit_trace = np.einsum("oh,ho->h", net.W2, net.W1)  # contribution of each hidden unit
    div = np.trace(net.Wskip) + (z > 0.0) @ unit_trace
    return float(div[0]) if single else div


def divergence_backward(net: Mlp, x: np.ndarray) -> dict:
    """Gradients of sum_rows divergence(net, x) w.r.t. parameters.

    The ReLU activation pattern is piecewise constant and treated as fixed,
    so b1 and b2 receive zero gradient.
    """
    if net.in_dim != net.out_dim:
        raise ValueError("divergence requires a square network")
    X, _ = _as_batch(x)
    z = X @ net.W1.T + net.b1
    msum = (z > 0.0).sum(axis=0).astype(float)  # (hidden,)
    return {
        "W1": msum[:, None] * net.W2.T,
        "b1": np.zeros_like(net.b1),
        "W2": (msum[:, None] * net.W1).T,
        "b2": np.zeros_like(net.b2),
        "Wskip": X.shape[0] * np.eye(net.out_dim),
    }


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(net: Mlp) -> AdamState:
    zeros = lambda: {name: np.zeros_like(getattr(net, name)) for name in PARAM_NAMES}
    return AdamState(m=zeros(), v=zeros())


def adam_step(state: AdamState, net: Mlp, grads: dict, lr: float) -> None:
    """One bias-corrected Adam update, applied to the network in place."""
    for name in PARAM_NAMES:
        if not np.all(np.isfinite(grads[name])):
            raise ValueError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name in PARAM_NAMES:
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g**2
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        getattr(net, name)[...] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Milestone decay: lr(k) = base * gamma^(#milestones <= k)."""

    base_lr: float
    milestones: tuple = ()
    gamma: float = 1.0

    def __post_init__(self):
        ms = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("milestones must be strictly increasing")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        object.__setattr__(self, "milestones", ms)


def lr_at(schedule: LrSchedule, k: int) -> float:
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    hits = int(np.searchsorted(np.asarray(schedule.milestones), k, side="right"))
    return schedule.base_lr * schedule.gamma**hits


@dataclass
class MlpStack:
    """Same-shaped MLPs stacked along a leading axis for batched evaluation."""

    W1: np.ndarray  # (k, hidden, in)
    b1: np.ndarray  # (k, hidden)
    W2: np.ndarray  # (k, out, hidden)
    b2: np.ndarray  # (k, out)
    Wskip: np.ndarray  # (k, out, in)


def stack_mlps(nets) -> MlpStack:
    return MlpStack(*(np.stack([getattr(n, name) for n in nets]) for name in PARAM_NAMES))


def stack_forward(st: MlpStack, X: np.ndarray) -> np.ndarray:
    """Evaluate net k on batch X[k]; X has shape (k, n, in)."""
    z = X @ st.W1.transpose(0, 2, 1) + st.b1[:, None, :]
    return np.maximum(z, 0.0) @ st.W2.transpose(0, 2, 1) + st.b2[:, None, :] + X @ st.Wskip.transpose(0, 2, 1)


@dataclass
class NetStack:
    """All networks of one solver run: per-step actor/value-gradient/score nets
    plus a single initial-value net, each with its own Adam state."""

    actor: list
    v0: Mlp
    grad_v: list
    score: list
    adam_actor: list
    adam_v0: AdamState
    adam_grad_v: list
    adam_score: list

    @property
    def n_steps(self) -> int:
        return len(self.actor)


def make_netstack(dim_state: int, dim_control: int, measure_dim: int, n_steps: int,
                  hidden: int, rng: np.random.Generator) -> NetStack:
    actor = [init_mlp(dim_state, hidden, dim_control, rng) for _ in range(n_steps)]
    v0 = init_mlp(dim_state, hidden, 1, rng)
    grad_v = [init_mlp(dim_state, hidden, dim_state, rng) for _ in range(n_steps)]
    score = [init_mlp(measure_dim, hidden, measure_dim, rng, skip_init="zero")
             for _ in range(n_steps)]
    return NetStack(
        actor=actor,
        v0=v0,
        grad_v=grad_v,
        score=score,
        adam_actor=[init_adam(n) for n in actor],
        adam_v0=init_adam(v0),
        adam_grad_v=[init_adam(n) for n in grad_v],
        adam_score=[init_adam(n) for n in score],
    )


def _net_to_dict(net: Mlp) -> dict:
    return {name: getattr(net, name).tolist() for name in PARAM_NAMES}


def _net_from_dict(d: dict) -> Mlp:
    return Mlp(*(np.asarray(d[name], dtype=float) for name in PARAM_NAMES))


def save_checkpoint(stack: NetStack, meta: dict, path) -> None:
    """JSON checkpoint: dims header plus row-major weights per step and role."""
    doc = {
        "format": "mlp-stack-v1",
        "meta": meta,
        "dims": {
            "n_steps": stack.n_steps,
            "state": stack.v0.in_dim,
            "control": stack.actor[0].out_dim,
            "measure": stack.score[0].in_dim,
            "hidden": stack.v0.hidden_dim,
        },
        "nets": {
            "actor": [_net_to_dict(n) for n in stack.actor],
            "v0": _net_to_dict(stack.v0),
            "grad_v": [_net_to_dict(n) for n in stack.grad_v],
            "score": [_net_to_dict(n) for n in stack.score],
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns (stack, meta); optimizer states are re-initialized."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "mlp-stack-v1":
        raise ValueError("unrecognized checkpoint format")
    nets = doc["nets"]
    actor = [_net_from_dict(d) for d in nets["actor"]]
    v0 = _net_from_dict(nets["v0"])
    grad_v = [_net_from_dict(d) for d in nets["grad_v"]]
    score = [_net_from_dict(d) for d in nets["score"]]
    stack = NetStack(
        actor=actor,
        v0=v0,
        grad_v=grad_v,
        score=score,
        adam_actor=[init_adam(n) for n in actor],
        adam_v0=init_adam(v0),
        adam_grad_v=[init_adam(n) for n in grad_v],
        adam_score=[init_adam(n) for n in score],
    )
    return stack, doc.get("meta", {})
