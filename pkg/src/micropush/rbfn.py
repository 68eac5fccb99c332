"""Radial basis function model of the distance-dependent coupling.

The learned model predicts the local-frame diagonal gains of the object
and relative motion maps from a single scalar input, the normalized
distance. Two weight matrices (one per map) share one set of activation
centers and widths. Offline training minimizes the mean squared velocity
prediction error with a moment-adaptive gradient optimizer; centers and
widths are refined offline and frozen afterwards, so the weights are the
only online-mutable parameters.

A global-frame variant that fits an unstructured 2x2 matrix field over the
full relative position is included as the data-efficiency ablation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import local_frame, normalized_distance
from .plant import DataTuple

ACTIVATION_KINDS = ("multiquadric", "gaussian")


class DegenerateCentersError(ValueError):
    """Dataset has no spread in the distance input, centers cannot be placed."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class InsufficientDataError(ValueError):
    """No samples left after filtering."""


@dataclass
class RbfnModel:
    kind: str
    centers: np.ndarray   # (p,)
    widths: np.ndarray    # (p,)
    w_u: np.ndarray       # (2, p)
    w_r: np.ndarray       # (2, p)

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        self.centers = np.asarray(self.centers, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        self.w_u = np.asarray(self.w_u, dtype=float)
        self.w_r = np.asarray(self.w_r, dtype=float)
        if self.centers.size < 1:
            raise ValueError("need at least one neuron")
        if np.any(self.widths <= 0):
            raise ValueError("widths must be strictly positive")
        for w in (self.w_u, self.w_r):
            if w.shape != (2, self.centers.size) or not np.all(np.isfinite(w)):
                raise ValueError("weight matrices must be finite with shape (2, p)")

    @property
    def p(self) -> int:
        return self.centers.size

    def weights(self, which: str) -> np.ndarray:
        if which == "u":
            return self.w_u
        if which == "r":
            return self.w_r
        raise ValueError("which must be 'u' or 'r'")

    def copy(self) -> "RbfnModel":
        return RbfnModel(self.kind, self.centers.copy(), self.widths.copy(),
                         self.w_u.copy(), self.w_r.copy())


def _phi(s, centers, widths, kind):
    """Activation matrix, shape (n, p) for vector s or (p,) for a scalar."""
    s = np.asarray(s, dtype=float)
    d = s[..., None] - centers
    if kind == "multiquadric":
        return np.sqrt(1.0 + (widths * d) ** 2)
    if kind == "gaussian":
        return np.exp(-((widths * d) ** 2))
    raise ValueError(f"unknown activation kind {kind!r}")


def _phi_partials(s, centers, widths, kind):
    """Returns (phi, dphi/dcenters, dphi/dwidths), each (n, p)."""
    s = np.asarray(s, dtype=float)
    d = s[..., None] - centers
    if kind == "multiquadric":
        phi = np.sqrt(1.0 + (widths * d) ** 2)
        dphi_dd = widths ** 2 * d / phi
        dphi_dw = widths * d ** 2 / phi
    elif kind == "gaussian":
        phi = np.exp(-((widths * d) ** 2))
        dphi_dd = -2.0 * widths ** 2 * d * phi
        dphi_dw = -2.0 * widths * d ** 2 * phi
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return phi, -dphi_dd, dphi_dw


def activation(s_r: float, model: RbfnModel) -> np.ndarray:
    """Activation vector at one normalized distance."""
    return _phi(float(s_r), model.centers, model.widths, model.kind)


def predict_gains(model: RbfnModel, s_r: float, which: str) -> np.ndarray:
    """Local-frame (normal, tangential) gains at a normalized distance."""
    return model.weights(which) @ activation(s_r, model)


def predict_g(model: RbfnModel, x_r, which: str, r_a: float = 5.0, r_u: float = 5.0) -> np.ndarray:
    """Estimated 2x2 coupling matrix in the global frame."""
    x_r = np.asarray(x_r, dtype=float)
    rot = local_frame(x_r)  # raises on zero x_r
    s_r = normalized_distance(x_r, r_a, r_u)
    return rot.T @ np.diag(predict_gains(model, s_r, which)) @ rot


def predict_velocity(model: RbfnModel, x_r, u, which: str,
                     r_a: float = 5.0, r_u: float = 5.0) -> np.ndarray:
    return predict_g(model, x_r, which, r_a, r_u) @ np.asarray(u, dtype=float)


@dataclass
class TrainConfig:
    """Offline training settings.

    Full-batch by default (the datasets are tiny); set batch_size for
    minibatching. tol, when positive, stops early once the absolute loss
    improvement over an epoch falls below it. final_linear_solve refits the
    weights exactly (they enter the loss linearly) after the gradient phase,
    with the centers and widths frozen at their trained values.
    """

    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 2000
    batch_size: int | None = None
    weight_decay: float = 0.0
    tol: float = 0.0
    seed: int = 0
    train_centers: bool = True
    final_linear_solve: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        for b in (self.beta1, self.beta2):
            if not 0.0 < b < 1.0:
                raise ValueError("decay rates must lie in (0, 1)")


def local_samples(data: list[DataTuple], r_a: float = 5.0, r_u: float = 5.0):
    """Rotate a dataset into per-sample local frames.

    Returns (s, u_loc, v_u_loc, v_r_loc); the loss is frame-invariant, so
    training runs entirely on these arrays.
    """
    if not data:
        raise InsufficientDataError("empty dataset")
    n = len(data)
    s = np.empty(n)
    u_loc = np.empty((n, 2))
    v_u_loc = np.empty((n, 2))
    v_r_loc = np.empty((n, 2))
    for i, t in enumerate(data):
        rot = local_frame(t.x_r)
        s[i] = normalized_distance(t.x_r, r_a, r_u)
        u_loc[i] = rot @ t.u
        v_u_loc[i] = rot @ t.v_u
        v_r_loc[i] = rot @ t.v_r
    return s, u_loc, v_u_loc, v_r_loc


def mse_loss_and_grads(centers, widths, w_u, w_r, kind, s, u_loc, v_u_loc, v_r_loc):
    """Joint MSE loss over both maps and its analytic gradients.

    Loss = mean over samples of |e_u|^2 + |e_r|^2 with
    e_k = v_k - diag(W_k phi) u in the local frame. Gradients are returned
    for the weights, centers, and widths.
    """
    n = s.size
    phi, dphi_dc, dphi_dw = _phi_partials(s, centers, widths, kind)
    grads = {}
    loss = 0.0
    dphi_acc = np.zeros_like(phi)
    for key, w, v in (("w_u", w_u, v_u_loc), ("w_r", w_r, v_r_loc)):
        pred = (phi @ w.T) * u_loc          # (n, 2)
        err = v - pred
        loss += float(np.sum(err ** 2)) / n
        eu = err * u_loc                    # (n, 2)
        grads[key] = (-2.0 / n) * (eu.T @ phi)
        dphi_acc += (-2.0 / n) * (eu @ w)
    grads["centers"] = np.sum(dphi_acc * dphi_dc, axis=0)
    grads["widths"] = np.sum(dphi_acc * dphi_dw, axis=0)
    return loss, grads


def init_centers(s: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform centers over the data range extended 5% past each end.

    Widths start at the reciprocal neuron spacing.
    """
    lo, hi = float(np.min(s)), float(np.max(s))
    span = hi - lo
    if span < 1e-9:
        raise DegenerateCentersError("all distance inputs identical")
    lo -= 0.05 * span
    hi += 0.05 * span
    centers = np.linspace(lo, hi, p) if p > 1 else np.array([0.5 * (lo + hi)])
    spacing = (hi - lo) / max(p - 1, 1)
    widths = np.full(p, 1.0 / spacing)
    return centers, widths


def _solve_weights(phi, u_loc, v_loc, ridge: float) -> np.ndarray:
    """Exact row-wise least squares for one weight matrix, given activations."""
    p = phi.shape[1]
    w = np.empty((2, p))
    for i in range(2):
        a = phi * u_loc[:, i:i + 1]
        ata = a.T @ a
        ata += (ridge * np.trace(ata) / p + 1e-12) * np.eye(p)
        w[i] = np.linalg.solve(ata, a.T @ v_loc[:, i])
    return w


def _adam_minimize(params, grad_fn, cfg: TrainConfig, weight_keys, history=None):
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    eps = 1e-8
    prev_loss = None
    for t in range(1, cfg.epochs + 1):
        loss, grads = grad_fn(params)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became non-finite at epoch {t}")
        if history is not None:
            history.append(loss)
        if cfg.weight_decay > 0.0:
            for k in weight_keys:
                grads[k] = grads[k] + cfg.weight_decay * params[k]
        for k in params:
            if k not in grads:
                continue
            m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * grads[k]
            v2[k] = cfg.beta2 * v2[k] + (1 - cfg.beta2) * grads[k] ** 2
            mhat = m[k] / (1 - cfg.beta1 ** t)
            vhat = v2[k] / (1 - cfg.beta2 ** t)
            params[k] = params[k] - cfg.lr * mhat / (np.sqrt(vhat) + eps)
        if "widths" in params:
            params["widths"] = np.maximum(np.abs(params["widths"]), 1e-6)
        if cfg.tol > 0.0 and prev_loss is not None and abs(prev_loss - loss) < cfg.tol:
            break
        prev_loss = loss
    return params


def train_offline(data: list[DataTuple], p: int, kind: str = "multiquadric",
                  cfg: TrainConfig | None = None, r_a: float = 5.0, r_u: float = 5.0,
                  return_history: bool = False):
    """Fit the decoupled model to a dataset.

    Raises DegenerateCentersError when the distance inputs have no spread and
    TrainingDivergedError when the loss goes non-finite.
    """
    if p < 1:
        raise ValueError("need at least one neuron")
    if cfg is None:
        cfg = TrainConfig()
    s, u_loc, v_u_loc, v_r_loc = local_samples(data, r_a, r_u)
    centers, widths = init_centers(s, p)
    rng = np.random.default_rng(cfg.seed)
    params = {
        "w_u": np.zeros((2, p)),
        "w_r": np.zeros((2, p)),
    }
    if cfg.train_centers:
        params["centers"] = centers
        params["widths"] = widths

    history: list[float] = []

    if cfg.batch_size is None or cfg.batch_size >= s.size:
        def grad_fn(pr):
            c = pr.get("centers", centers)
            w = pr.get("widths", widths)
            return mse_loss_and_grads(c, w, pr["w_u"], pr["w_r"], kind,
                                      s, u_loc, v_u_loc, v_r_loc)
        params = _adam_minimize(params, grad_fn, cfg, ("w_u", "w_r"), history)
    else:
        bs = cfg.batch_size
        m = {k: np.zeros_like(v) for k, v in params.items()}
        v2 = {k: np.zeros_like(v) for k, v in params.items()}
        eps, t = 1e-8, 0
        for _ in range(cfg.epochs):
            order = rng.permutation(s.size)
            epoch_loss = 0.0
            for start in range(0, s.size, bs):
                idx = order[start:start + bs]
                c = params.get("centers", centers)
                w = params.get("widths", widths)
                loss, grads = mse_loss_and_grads(c, w, params["w_u"], params["w_r"], kind,
                                                 s[idx], u_loc[idx], v_u_loc[idx], v_r_loc[idx])
                if not np.isfinite(loss):
                    raise TrainingDivergedError("loss became non-finite")
                epoch_loss += loss * idx.size
                if cfg.weight_decay > 0.0:
                    for k in ("w_u", "w_r"):
                        grads[k] = grads[k] + cfg.weight_decay * params[k]
                t += 1
                for k in params:
                    if k not in grads:
                        continue
                    m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * grads[k]
                    v2[k] = cfg.beta2 * v2[k] + (1 - cfg.beta2) * grads[k] ** 2
                    params[k] = params[k] - cfg.lr * (m[k] / (1 - cfg.beta1 ** t)) / (
                        np.sqrt(v2[k] / (1 - cfg.beta2 ** t)) + eps)
                if "widths" in params:
                    params["widths"] = np.maximum(np.abs(params["widths"]), 1e-6)
            history.append(epoch_loss / s.size)

    centers = params.get("centers", centers)
    widths = np.maximum(np.abs(params.get("widths", widths)), 1e-6)
    w_u, w_r = params["w_u"], params["w_r"]
    if cfg.final_linear_solve:
        phi = _phi(s, centers, widths, kind)
        w_u = _solve_weights(phi, u_loc, v_u_loc, cfg.weight_decay)
        w_r = _solve_weights(phi, u_loc, v_r_loc, cfg.weight_decay)
        final_loss = (np.sum((v_u_loc - (phi @ w_u.T) * u_loc) ** 2)
                      + np.sum((v_r_loc - (phi @ w_r.T) * u_loc) ** 2)) / s.size
        if not np.isfinite(final_loss):
            raise TrainingDivergedError("final refit produced non-finite loss")
        history.append(float(final_loss))
    model = RbfnModel(kind, centers, widths, w_u, w_r)
    if return_history:
        return model, history
    return model


def test_error(model: RbfnModel, data: list[DataTuple], which: str = "u",
               floor: float = 0.5, r_a: float = 5.0, r_u: float = 5.0) -> float:
    """Mean relative velocity prediction error, as a fraction.

    Samples whose measured speed is below the floor are excluded; the ratio
    is undefined at zero velocity.
    """
    s, u_loc, v_u_loc, v_r_loc = local_samples(data, r_a, r_u)
    v_loc = v_u_loc if which == "u" else v_r_loc
    phi = _phi(s, model.centers, model.widths, model.kind)
    pred = (phi @ model.weights(which).T) * u_loc
    norms = np.linalg.norm(v_loc, axis=1)
    keep = norms >= floor
    if not np.any(keep):
        raise InsufficientDataError("no samples above the speed floor")
    ratios = np.linalg.norm(v_loc[keep] - pred[keep], axis=1) / norms[keep]
    return float(np.mean(ratios))


def save_model(path, model: RbfnModel) -> None:
    """Round-trip-exact JSON serialization (weights row-major)."""
    doc = {
        "kind": model.kind,
        "p": int(model.p),
        "centers": model.centers.tolist(),
        "widths": model.widths.tolist(),
        "w_u": model.w_u.tolist(),
        "w_r": model.w_r.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> RbfnModel:
    with open(path) as fh:
        doc = json.load(fh)
    model = RbfnModel(doc["kind"], np.array(doc["centers"]), np.array(doc["widths"]),
                      np.array(doc["w_u"]), np.array(doc["w_r"]))
    if model.p != doc["p"]:
        raise ValueError("neuron count does not match the stored arrays")
    return model


# ----------------------------------------------------------------------
# Global-frame ablation: unstructured 2x2 matrix field of the full relative
# position, used to demonstrate the data-efficiency gain of the decoupled
# local-frame model.
# ----------------------------------------------------------------------

@dataclass
class GlobalRbfnModel:
    kind: str
    centers: np.ndarray   # (p, 2)
    widths: np.ndarray    # (p,)
    w_u: np.ndarray       # (4, p), rows are the 2x2 entries row-major
    w_r: np.ndarray       # (4, p)

    @property
    def p(self) -> int:
        return self.centers.shape[0]

    def weights(self, which: str) -> np.ndarray:
        return self.w_u if which == "u" else self.w_r


def _phi2d(x, centers, widths, kind):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
    if kind == "multiquadric":
        return np.sqrt(1.0 + (widths * d) ** 2)
    return np.exp(-((widths * d) ** 2))


def predict_g_global(model: GlobalRbfnModel, x_r, which: str) -> np.ndarray:
    phi = _phi2d(x_r, model.centers, model.widths, model.kind)[0]
    return (model.weights(which) @ phi).reshape(2, 2)


def train_global(data: list[DataTuple], p: int, kind: str = "multiquadric",
                 cfg: TrainConfig | None = None) -> GlobalRbfnModel:
    """Fit the unstructured global-frame ablation with the same optimizer."""
    if cfg is None:
        cfg = TrainConfig()
    n = len(data)
    if n == 0:
        raise InsufficientDataError("empty dataset")
    x = np.array([t.x_r for t in data])
    u = np.array([t.u for t in data])
    v_u = np.array([t.v_u for t in data])
    v_r = np.array([t.v_r for t in data])
    rng = np.random.default_rng(cfg.seed)
    idx = rng.choice(n, size=min(p, n), replace=False)
    centers = x[idx].copy()
    if centers.shape[0] < p:
        extra = centers[rng.integers(0, centers.shape[0], p - centers.shape[0])]
        centers = np.vstack([centers, extra + rng.normal(scale=1.0, size=extra.shape)])
    span = max(float(np.ptp(x[:, 0])), float(np.ptp(x[:, 1])), 1e-6)
    widths = np.full(p, p ** 0.5 / span)

    def grad_fn(pr):
        phi = _phi2d(x, pr["centers"], np.abs(pr["widths"]) + 1e-9, kind)  # (n, p)
        loss = 0.0
        grads = {}
        d = x[:, None, :] - pr["centers"][None, :, :]
        dist = np.linalg.norm(d, axis=2)
        w_abs = np.abs(pr["widths"]) + 1e-9
        if kind == "multiquadric":
            dphi_ddist = w_abs ** 2 * dist / phi
            dphi_dw = w_abs * dist ** 2 / phi
        else:
            dphi_ddist = -2.0 * w_abs ** 2 * dist * phi
            dphi_dw = -2.0 * w_abs * dist ** 2 * phi
        safe = np.where(dist > 1e-12, dist, 1.0)
        ddist_dc = -d / safe[..., None]
        dphi_acc = np.zeros_like(phi)
        for key, v in (("w_u", v_u), ("w_r", v_r)):
            w = pr[key]
            gmat = (phi @ w.T).reshape(n, 2, 2)
            pred = np.einsum("nij,nj->ni", gmat, u)
            err = v - pred
            loss += float(np.sum(err ** 2)) / n
            # dL/dg entries: -2/n * err_i * u_j
            dg = (-2.0 / n) * np.einsum("ni,nj->nij", err, u).reshape(n, 4)
            grads[key] = dg.T @ phi
            dphi_acc += dg @ w
        grads["centers"] = np.einsum("np,np,npk->pk", dphi_acc, dphi_ddist, ddist_dc)
        grads["widths"] = np.sum(dphi_acc * dphi_dw, axis=0)
        return loss, grads

    params = {"w_u": np.zeros((4, p)), "w_r": np.zeros((4, p)),
              "centers": centers, "widths": widths}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    eps = 1e-8
    for t in range(1, cfg.epochs + 1):
        loss, grads = grad_fn(params)
        if not np.isfinite(loss):
            raise TrainingDivergedError("global ablation diverged")
        for k in params:
            m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * grads[k]
            v2[k] = cfg.beta2 * v2[k] + (1 - cfg.beta2) * grads[k] ** 2
            params[k] = params[k] - cfg.lr * (m[k] / (1 - cfg.beta1 ** t)) / (
                np.sqrt(v2[k] / (1 - cfg.beta2 ** t)) + eps)
    widths = np.abs(params["widths"]) + 1e-9
    w_u, w_r = params["w_u"], params["w_r"]
    if cfg.final_linear_solve:
        phi = _phi2d(x, params["centers"], widths, kind)
        w_u = _solve_weights_global(phi, u, v_u, cfg.weight_decay)
        w_r = _solve_weights_global(phi, u, v_r, cfg.weight_decay)
    return GlobalRbfnModel(kind, params["centers"], widths, w_u, w_r)


def _solve_weights_global(phi, u, v, ridge):
    """Exact least squares for the 4 x p global weights.

    Row-major matrix entries: pred_i = sum_j g_ij u_j with g row i depending
    on weight rows (2i, 2i+1); the two output rows decouple.
    """
    n, p = phi.shape
    w = np.empty((4, p))
    for i in range(2):
        # pred_i = (phi @ w_row_i0) * u_0 + (phi @ w_row_i1) * u_1
        a = np.hstack([phi * u[:, 0:1], phi * u[:, 1:2]])  # (n, 2p)
        ata = a.T @ a
        ata += (ridge * np.trace(ata) / (2 * p) + 1e-12) * np.eye(2 * p)
        sol = np.linalg.solve(ata, a.T @ v[:, i])
        w[2 * i] = sol[:p]
        w[2 * i + 1] = sol[p:]
    return w


def test_error_global(model: GlobalRbfnModel, data: list[DataTuple], which: str = "u",
                      floor: float = 0.5) -> float:
    x = np.array([t.x_r for t in data])
    u = np.array([t.u for t in data])
    v = np.array([t.v_u if which == "u" else t.v_r for t in data])
    phi = _phi2d(x, model.centers, model.widths, model.kind)
    gmat = (phi @ model.weights(which).T).reshape(len(data), 2, 2)
    pred = np.einsum("nij,nj->ni", gmat, u)
    norms = np.linalg.norm(v, axis=1)
    keep = norms >= floor
    if not np.any(keep):
        raise InsufficientDataError("no samples above the speed floor")
    return float(np.mean(np.linalg.norm(v[keep] - pred[keep], axis=1) / norms[keep]))
