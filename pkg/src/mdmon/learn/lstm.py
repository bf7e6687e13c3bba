"""A small LSTM for next-value sequence prediction, trained by BPTT.

Gate math follows the standard formulation: sigmoid input/forget/output
gates, tanh candidate, with a linear readout from the hidden state. The
analytic gradients are verified against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DimensionMismatch(ValueError):
    code = "DIMENSION_MISMATCH"


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


# parameter blocks, in a fixed order for flattening
_GATES = ("i", "f", "o", "g")


@dataclass
class LstmCell:
    input_size: int
    hidden_size: int
    # per gate: W (H x D), U (H x H), b (H)
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def zeros(input_size: int, hidden_size: int) -> "LstmCell":
        cell = LstmCell(input_size, hidden_size)
        d, h = input_size, hidden_size
        for g in _GATES:
            cell.params[f"W{g}"] = np.zeros((h, d))
            cell.params[f"U{g}"] = np.zeros((h, h))
            cell.params[f"b{g}"] = np.zeros(h)
        cell.params["Wout"] = np.zeros((1, h))
        cell.params["bout"] = np.zeros(1)
        return cell

    @staticmethod
    def random(input_size: int, hidden_size: int, seed: int = 0, scale: float = 0.3) -> "LstmCell":
        cell = LstmCell.zeros(input_size, hidden_size)
        rng = np.random.default_rng(seed)
        for k, v in cell.params.items():
            cell.params[k] = rng.normal(0.0, scale, size=v.shape)
        return cell

    def check_shapes(self) -> None:
        d, h = self.input_size, self.hidden_size
        for g in _GATES:
            if self.params[f"W{g}"].shape != (h, d) or self.params[f"U{g}"].shape != (h, h) \
                    or self.params[f"b{g}"].shape != (h,):
                raise DimensionMismatch(f"gate {g} parameter shapes inconsistent")
        if self.params["Wout"].shape != (1, h) or self.params["bout"].shape != (1,):
            raise DimensionMismatch("readout shapes inconsistent")

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self._keys()])

    def load_flat(self, theta: np.ndarray) -> None:
        at = 0
        for k in self._keys():
            v = self.params[k]
            self.params[k] = theta[at:at + v.size].reshape(v.shape)
            at += v.size

    def _keys(self) -> list[str]:
        return [f"{m}{g}" for g in _GATES for m in ("W", "U", "b")] + ["Wout", "bout"]

    def to_record(self) -> dict:
        return {
            "kind": "lstm",
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @staticmethod
    def from_record(d: dict) -> "LstmCell":
        cell = LstmCell.zeros(int(d["input_size"]), int(d["hidden_size"]))
        for k, v in d["params"].items():
            cell.params[k] = np.asarray(v, dtype=np.float64)
        return cell


def lstm_step(cell: LstmCell, x_t, h_prev, c_prev):
    """One gate update; returns (h_t, c_t)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (cell.input_size,):
        raise DimensionMismatch(f"x_t must have shape ({cell.input_size},)")
    if h_prev.shape != (cell.hidden_size,) or c_prev.shape != (cell.hidden_size,):
        raise DimensionMismatch("state shapes inconsistent with hidden size")
    p = cell.params
    i = _sigmoid(p["Wi"] @ x_t + p["Ui"] @ h_prev + p["bi"])
    f = _sigmoid(p["Wf"] @ x_t + p["Uf"] @ h_prev + p["bf"])
    o = _sigmoid(p["Wo"] @ x_t + p["Uo"] @ h_prev + p["bo"])
    g = np.tanh(p["Wg"] @ x_t + p["Ug"] @ h_prev + p["bg"])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def _forward(cell: LstmCell, xs: np.ndarray):
    """Run the sequence; cache per-step values for BPTT."""
    h = np.zeros(cell.hidden_size)
    c = np.zeros(cell.hidden_size)
    p = cell.params
    cache = []
    preds = []
    for x_t in xs:
        i = _sigmoid(p["Wi"] @ x_t + p["Ui"] @ h + p["bi"])
        f = _sigmoid(p["Wf"] @ x_t + p["Uf"] @ h + p["bf"])
        o = _sigmoid(p["Wo"] @ x_t + p["Uo"] @ h + p["bo"])
        g = np.tanh(p["Wg"] @ x_t + p["Ug"] @ h + p["bg"])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        pred = float((p["Wout"] @ h_new + p["bout"])[0])
        cache.append((x_t, h, c, i, f, o, g, c_new, tanh_c, h_new))
        preds.append(pred)
        h, c = h_new, c_new
    return np.array(preds), cache


def sequence_loss(cell: LstmCell, xs, targets) -> float:
    """Mean squared error of next-value predictions over one sequence."""
    preds, _ = _forward(cell, np.asarray(xs, dtype=np.float64))
    t = np.asarray(targets, dtype=np.float64)
    return float(np.mean((preds - t) ** 2))


def backprop(cell: LstmCell, xs, targets) -> dict[str, np.ndarray]:
    """Analytic gradients of sequence_loss w.r.t. every parameter."""
    xs = np.asarray(xs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    preds, cache = _forward(cell, xs)
    p = cell.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    T = len(xs)
    dh_next = np.zeros(cell.hidden_size)
    dc_next = np.zeros(cell.hidden_size)
    for t in reversed(range(T)):
        x_t, h_prev, c_prev, i, f, o, g, c_new, tanh_c, h_new = cache[t]
        dpred = 2.0 * (preds[t] - targets[t]) / T
        grads["Wout"] += dpred * h_new[None, :]
        grads["bout"] += dpred
        dh = dpred * p["Wout"][0] + dh_next
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_prev = dc * f
        # pre-activation gradients
        dzi = di * i * (1.0 - i)
        dzf = df * f * (1.0 - f)
        dzo = do * o * (1.0 - o)
        dzg = dg * (1.0 - g ** 2)
        for name, dz in (("i", dzi), ("f", dzf), ("o", dzo), ("g", dzg)):
            grads[f"W{name}"] += np.outer(dz, x_t)
            grads[f"U{name}"] += np.outer(dz, h_prev)
            grads[f"b{name}"] += dz
        dh_next = (
            p["Ui"].T @ dzi + p["Uf"].T @ dzf + p["Uo"].T @ dzo + p["Ug"].T @ dzg
        )
        dc_next = dc_prev
    return grads


def gradient_check(cell: LstmCell, xs, targets, eps: float = 1e-5) -> float:
    """Max relative error, analytic vs central finite differences."""
    analytic = backprop(cell, xs, targets)
    flat_analytic = np.concatenate([analytic[k].ravel() for k in cell._keys()])
    theta = cell.flatten()
    numeric = np.zeros_like(theta)
    probe = LstmCell.zeros(cell.input_size, cell.hidden_size)
    for j in range(theta.size):
        for sign, slot in ((+1, 0), (-1, 1)):
            shifted = theta.copy()
            shifted[j] += sign * eps
            probe.load_flat(shifted)
            if slot == 0:
                up = sequence_loss(probe, xs, targets)
            else:
                down = sequence_loss(probe, xs, targets)
        numeric[j] = (up - down) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(flat_analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(flat_analytic - numeric) / denom))


def lstm_train(
    sequences: list[np.ndarray],
    epochs: int = 200,
    hidden_size: int = 8,
    lr: float = 0.05,
    seed: int = 0,
    patience: int = 10,
    min_delta: float = 0.0,
) -> tuple[LstmCell, list[float]]:
    """Gradient-descent training on next-value prediction.

    Each sequence is a 1-D array; inputs are x[:-1], targets x[1:]. With
    two or more sequences the last one is held out for early stopping:
    training stops after `patience` epochs without the validation loss
    improving by more than `min_delta`, and the best parameters are kept.
    A single sequence monitors its own training loss. Returns the trained
    cell and the per-epoch mean training-loss curve.
    """
    if len(sequences) > 1:
        train_seqs, val_seqs = sequences[:-1], sequences[-1:]
    else:
        train_seqs, val_seqs = sequences, sequences
    cell = LstmCell.random(1, hidden_size, seed=seed)
    curve = []
    best_val = math.inf
    best_theta = cell.flatten()
    stall = 0
    for _ in range(epochs):
        losses = []
        for seq in train_seqs:
            seq = np.asarray(seq, dtype=np.float64)
            xs = seq[:-1, None]
            targets = seq[1:]
            grads = backprop(cell, xs, targets)
            for k in cell.params:
                cell.params[k] = cell.params[k] - lr * grads[k]
            losses.append(sequence_loss(cell, xs, targets))
        curve.append(float(np.mean(losses)))
        val = float(np.mean([
            sequence_loss(cell, np.asarray(s)[:-1, None], np.asarray(s)[1:])
            for s in val_seqs
        ]))
        if val < best_val - min_delta:
            best_val = val
            best_theta = cell.flatten()
            stall = 0
        else:
            stall += 1
            if stall >= patience:
                break
    cell.load_flat(best_theta)
    return cell, curve


def predict_next(cell: LstmCell, seq) -> float:
    seq = np.asarray(seq, dtype=np.float64)
    preds, _ = _forward(cell, seq[:, None] if seq.ndim == 1 else seq)
    return float(preds[-1])
