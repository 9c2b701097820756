"""Design spaces, the c-optimal objective and incremental design state.

A design space is a list of equally sized experimental units partitioning
the candidate observations. A design is a subset of units; its quality is
the variance ``c^T M^{-1} c`` of the targeted contrast under generalized
least squares, where ``M = X^T Sigma^{-1} X`` is the information matrix of
the selected observations. Degenerate designs (information matrix singular
in the direction of ``c``) evaluate to the :data:`INFEASIBLE` sentinel,
which compares greater than every finite value and rejects arithmetic.

``DesignState`` maintains a design incrementally: the inverse covariance is
kept up to date through rank-1 kernels when units are added or removed, and
the information matrix through the Schur-complement update

    M_new = M + [X2 - S12^T S1^{-1} X1]^T S^{-1} [X2 - S12^T S1^{-1} X1]

with ``S = S2 - S12^T S1^{-1} S12``, so candidate moves cost O(r n^2)
instead of a fresh O(n^3) factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .covariance import covariance_relevance
from .errors import ConfigError, EstimabilityError, SingularMatrixError
from .model import ModelSpec, ModelWorkspace

REFRESH_INTERVAL = 50  # accepted moves between from-scratch cache rebuilds


class Infeasible:
    """Sentinel for designs carrying no information about the contrast.

    Compares greater than every finite value; arithmetic with it is a
    ``TypeError`` so degenerate objective values cannot leak into sums.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFEASIBLE"

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("coptdesign.INFEASIBLE")


INFEASIBLE = Infeasible()


def is_infeasible(value) -> bool:
    return isinstance(value, Infeasible)


@dataclass(frozen=True)
class ExperimentalUnit:
    """An atomic group of observation rows, selected or removed together."""

    id: int
    obs_indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.obs_indices) < 1:
            raise ConfigError("experimental units must contain at least one observation")


class DesignSpace:
    """All candidate experimental units over a fixed observation list."""

    def __init__(self, units, obs_meta):
        self.units = list(units)
        self.obs_meta = list(obs_meta)
        self.units_by_id = {u.id: u for u in self.units}
        if len(self.units_by_id) != len(self.units):
            raise ConfigError("unit ids must be unique")
        sizes = {len(u.obs_indices) for u in self.units}
        if len(sizes) > 1:
            raise ConfigError("all experimental units must have the same size")
        seen = sorted(i for u in self.units for i in u.obs_indices)
        if seen != list(range(len(self.obs_meta))):
            raise ConfigError("units must partition the observation indices exactly once")

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_obs(self) -> int:
        return len(self.obs_meta)

    @property
    def unit_size(self) -> int:
        return len(self.units[0].obs_indices)


def detect_duplicates(space: DesignSpace, workspaces) -> list[list[int]]:
    """Partition unit ids into swap-equivalence classes.

    Two units are interchangeable in any design exactly when their
    observations match pairwise on the covariate row and on every piece of
    metadata the covariance function can see. Group ids (cluster,
    individual) that occur only inside a single unit are "private": no
    other unit can share covariance through them, so they are replaced by
    canonical local labels before comparison. This makes whole-cluster
    units with identical treatment sequences duplicates of each other,
    while cells of different clusters stay distinct. Shared ids are
    compared exactly; under several models (robust classes) units must
    match under every model.
    """
    if isinstance(workspaces, ModelWorkspace):
        workspaces = [workspaces]
    cluster_units: dict[int, set] = {}
    individual_units: dict[int, set] = {}
    for unit in space.units:
        for i in unit.obs_indices:
            meta = space.obs_meta[i]
            if meta.cluster is not None:
                cluster_units.setdefault(meta.cluster, set()).add(unit.id)
            if meta.individual is not None:
                individual_units.setdefault(meta.individual, set()).add(unit.id)

    def unit_signature(unit, ws):
        rel = covariance_relevance(ws.spec.covariance)
        rows = []
        for i in unit.obs_indices:
            meta = space.obs_meta[i]
            base = (
                ws.X[i].tobytes(),
                meta.period if rel.period else None,
                meta.coord if rel.coord else None,
            )
            rows.append((base, meta.cluster if rel.cluster else None,
                         meta.individual if rel.individual else None))
        # Canonical labels for private group ids, assigned in the order the
        # groups first appear when observations are sorted by their
        # id-independent part. Ambiguity between equal-base observations can
        # only split true duplicates, never merge distinct units.
        cluster_label: dict[int, int] = {}
        individual_label: dict[int, int] = {}
        for base, cl, ind in sorted(rows, key=lambda t: t[0]):
            if cl is not None and cluster_units[cl] == {unit.id} and cl not in cluster_label:
                cluster_label[cl] = len(cluster_label)
            if (
                ind is not None
                and individual_units[ind] == {unit.id}
                and ind not in individual_label
            ):
                individual_label[ind] = len(individual_label)

        def group_key(value, labels):
            if value is None:
                return None
            if value in labels:
                return ("private", labels[value])
            return ("shared", value)

        return tuple(
            sorted(
                (base, group_key(cl, cluster_label), group_key(ind, individual_label))
                for base, cl, ind in rows
            )
        )

    groups: dict[tuple, list[int]] = {}
    for unit in space.units:
        sig = tuple(unit_signature(unit, ws) for ws in workspaces)
        groups.setdefault(sig, []).append(unit.id)
    classes = [sorted(ids) for ids in groups.values()]
    classes.sort(key=lambda ids: ids[0])
    return classes


RANK_TOL = 1e-10  # relative eigenvalue cutoff deciding numerical rank of M


def c_objective(M: np.ndarray, c: np.ndarray):
    """Objective value c^T M^{-1} c, or :data:`INFEASIBLE` when degenerate.

    Degenerate means the information matrix is not numerically positive
    definite: any eigenvalue below ``RANK_TOL`` times the largest counts as
    zero. The same rule serves the incremental and the from-scratch paths,
    so rounding residue left in never-observed directions by a chain of
    updates cannot masquerade as information. Requiring full rank (rather
    than only ``c in range(M)``) also avoids the pseudo-inverse boundary
    where the objective would lose its monotone structure.
    """
    Ms = (M + M.T) / 2.0
    lam, V = np.linalg.eigh(Ms)
    lmax = lam[-1] if lam.size else 0.0
    if not np.isfinite(lmax) or lmax <= 0 or lam[0] <= RANK_TOL * lmax:
        return INFEASIBLE
    w = V.T @ c
    value = float(np.sum(w * w / lam))
    return value if np.isfinite(value) else INFEASIBLE


def check_estimable(M: np.ndarray, c: np.ndarray, label: str = "model"):
    """Verify c lies in the range of the full-space information matrix."""
    lam, V = np.linalg.eigh(M)
    lmax = lam[-1] if lam.size else 0.0
    if lmax <= 0:
        raise EstimabilityError(f"{label}: full design space carries no information")
    null = lam <= 1e-10 * lmax
    w = V.T @ c
    if np.linalg.norm(w[null]) > 1e-8 * np.linalg.norm(c):
        raise EstimabilityError(
            f"{label}: contrast c is not estimable under the full design space "
            f"(component of size {np.linalg.norm(w[null]):.3e} outside range(M))"
        )


def remove_obs_downdate(sigma_inv: np.ndarray, obs_position: int) -> np.ndarray:
    """Inverse covariance with the observation at ``obs_position`` removed."""
    try:
        return kernels.downdate_inverse(np.ascontiguousarray(sigma_inv), obs_position)
    except ValueError as exc:
        raise SingularMatrixError(str(exc)) from exc


def add_obs_update(sigma_inv: np.ndarray, cross_cov: np.ndarray, self_var: float) -> np.ndarray:
    """Inverse covariance extended by one observation."""
    try:
        return kernels.extend_inverse(
            np.ascontiguousarray(sigma_inv),
            np.ascontiguousarray(cross_cov, dtype=np.float64),
            float(self_var),
        )
    except ValueError as exc:
        raise SingularMatrixError(str(exc)) from exc


def schur_information_delta(sinv, F, S2, X1, X2):
    """Information gained by adding observations with cross-covariance F.

    Returns ``delta_M`` or ``None`` when the Schur complement is not
    positive definite (numerically singular augmentation).
    """
    A = sinv @ F if sinv.size else np.zeros((0, F.shape[1]))
    S = S2 - F.T @ A
    try:
        cho = cho_factor((S + S.T) / 2.0, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    U = X2 - A.T @ X1
    return U.T @ cho_solve(cho, U, check_finite=False)


class DesignProblem:
    """A design space bound to one or more weighted models and a contrast.

    For a single model the objective is the c-optimal variance; for a
    weighted class it is the prior-weighted sum of the per-model variances.
    Construction validates weights, checks that the contrast is estimable
    under every model on the full space, and computes the duplicate-class
    partition (the common refinement across models).
    """

    def __init__(self, space: DesignSpace, models, c, weights=None):
        if isinstance(models, ModelSpec):
            models = [models]
        self.space = space
        if weights is None:
            weights = [1.0] * len(models)
        if len(weights) != len(models) or not models:
            raise ConfigError("need one weight per model and at least one model")
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w <= 0):
            raise ConfigError("model weights must be positive")
        self.weights = w / w.sum()
        self.workspaces = [ModelWorkspace(space.obs_meta, spec) for spec in models]
        p_set = {ws.n_params for ws in self.workspaces}
        if len(p_set) != 1:
            raise ConfigError("all models in a class must share the parameter dimension")
        self.n_params = p_set.pop()
        self.c = np.asarray(c, dtype=np.float64)
        if self.c.shape != (self.n_params,):
            raise ConfigError(f"c must have length {self.n_params}")
        if not np.any(self.c != 0):
            raise ConfigError("c must be non-zero")
        for i, ws in enumerate(self.workspaces):
            check_estimable(ws.full_information(), self.c, label=f"model {i}")
        self.classes = detect_duplicates(space, self.workspaces)
        self.class_of = {}
        for k, ids in enumerate(self.classes):
            for uid in ids:
                self.class_of[uid] = k

    @property
    def n_units(self) -> int:
        return self.space.n_units

    @property
    def n_models(self) -> int:
        return len(self.workspaces)

    def combine(self, g_values):
        """Weighted objective; propagates the infeasible sentinel."""
        total = 0.0
        for w, g in zip(self.weights, g_values):
            if is_infeasible(g):
                return INFEASIBLE
            total += w * g
        return total

    def objective_components(self, order):
        """Per-model objective values of an observation list, from scratch."""
        order = list(order)
        out = []
        for ws in self.workspaces:
            sigma = ws.sigma(order)
            try:
                cho = cho_factor(sigma, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise SingularMatrixError(
                    f"covariance of the selected observations is singular: {exc}"
                ) from exc
            M = ws.X[order].T @ cho_solve(cho, ws.X[order], check_finite=False)
            out.append(c_objective(M, self.c))
        return out

    def value_of_ids(self, ids):
        """Objective of a unit-id selection, computed from scratch."""
        order = [i for uid in sorted(ids) for i in self.space.units_by_id[uid].obs_indices]
        if not order:
            return INFEASIBLE
        return self.combine(self.objective_components(order))


class _Candidate:
    """Arrays describing a hypothetical design (shared shape with DesignState)."""

    __slots__ = ("order", "sinvs", "Ms")

    def __init__(self, order, sinvs, Ms):
        self.order = order
        self.sinvs = sinvs
        self.Ms = Ms


class DesignState:
    """A design with incrementally maintained inverse covariance and information.

    Mutation is single-owner; candidate evaluations (``value_add``,
    ``snapshot_remove``) never touch the cached arrays and may run
    concurrently on a read-only snapshot.
    """

    def __init__(self, problem: DesignProblem, ids):
        self.problem = problem
        ids = sorted(ids)
        if len(set(ids)) != len(ids):
            raise ConfigError("selected unit ids must be distinct")
        self.selected = set(ids)
        self.counts = np.zeros(len(problem.classes), dtype=np.intp)
        for uid in ids:
            self.counts[problem.class_of[uid]] += 1
        self.order = [i for uid in ids for i in problem.space.units_by_id[uid].obs_indices]
        self.sinvs: list[np.ndarray] = []
        self.Ms: list[np.ndarray] = []
        self._rebuild()
        self._mutations = 0
        self._value = None

    # -- construction helpers -------------------------------------------------

    def _rebuild(self):
        self.sinvs = []
        self.Ms = []
        for ws in self.problem.workspaces:
            sigma = ws.sigma(self.order)
            try:
                cho = cho_factor(sigma, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise SingularMatrixError(
                    f"covariance of units {sorted(self.selected)} is singular: {exc}"
                ) from exc
            sinv = cho_solve(cho, np.eye(len(self.order)), check_finite=False)
            sinv = (sinv + sinv.T) / 2.0
            X = ws.X[self.order]
            self.sinvs.append(sinv)
            self.Ms.append(X.T @ (sinv @ X))
        self._value = None

    # -- inspection ------------------------------------------------------------

    @property
    def size(self) -> int:
        return len(self.selected)

    def ids(self) -> list[int]:
        return sorted(self.selected)

    def value_components(self):
        return [c_objective(M, self.problem.c) for M in self.Ms]

    def value(self):
        if self._value is None:
            self._value = self.problem.combine(self.value_components())
        return self._value

    # -- candidate evaluation (no mutation) ------------------------------------

    def _unit(self, uid) -> ExperimentalUnit:
        return self.problem.space.units_by_id[uid]

    def snapshot_remove(self, uid) -> _Candidate:
        """Arrays for the design minus ``uid`` (the state itself is unchanged)."""
        unit = self._unit(uid)
        positions = sorted(self.order.index(i) for i in unit.obs_indices)
        new_order = [obs for k, obs in enumerate(self.order) if obs not in unit.obs_indices]
        removed = list(unit.obs_indices)
        sinvs, Ms = [], []
        for ws, sinv, M in zip(self.problem.workspaces, self.sinvs, self.Ms):
            down = sinv
            for pos in reversed(positions):
                try:
                    down = kernels.downdate_inverse(np.ascontiguousarray(down), pos)
                except ValueError as exc:
                    raise SingularMatrixError(
                        f"cannot remove unit {uid}: {exc}"
                    ) from exc
            F = ws.sigma_block(new_order, removed)
            S2 = ws.sigma_block(removed, removed)
            delta = schur_information_delta(down, F, S2, ws.X[new_order], ws.X[removed])
            if delta is None:
                raise SingularMatrixError(
                    f"information downdate for unit {uid} hit a singular Schur complement"
                )
            Ms.append(M - delta)
            sinvs.append(down)
        return _Candidate(new_order, sinvs, Ms)

    def candidate_value(self, cand: _Candidate):
        return self.problem.combine(c_objective(M, self.problem.c) for M in cand.Ms)

    def value_add(self, uid, base=None):
        """Objective after adding ``uid`` to ``base`` (default: this design)."""
        base = base if base is not None else self
        unit = self._unit(uid)
        new_obs = list(unit.obs_indices)
        gs = []
        for ws, sinv, M in zip(self.problem.workspaces, base.sinvs, base.Ms):
            F = ws.sigma_block(base.order, new_obs)
            S2 = ws.sigma_block(new_obs, new_obs)
            delta = schur_information_delta(sinv, F, S2, ws.X[base.order], ws.X[new_obs])
            if delta is None:
                gs.append(INFEASIBLE)
                continue
            gs.append(c_objective(M + delta, self.problem.c))
        return self.problem.combine(gs)

    def values_add_batch(self, uids, base=None):
        """Objective after adding each of ``uids`` to ``base``, in one pass.

        Equivalent to ``[self.value_add(u, base) for u in uids]`` but shares
        the O(n^2 k) covariance work across candidates and finishes each
        candidate with a Woodbury update of the P x P information matrix.
        Falls back to the plain path whenever the base information matrix is
        degenerate or a candidate's update is too large for the rank guard.
        """
        base = base if base is not None else self
        uids = list(uids)
        if not uids:
            return []
        space = self.problem.space
        r = space.unit_size
        flat = [i for uid in uids for i in space.units_by_id[uid].obs_indices]
        k = len(uids)
        c = self.problem.c
        totals = np.zeros(k)
        infeasible = np.zeros(k, dtype=bool)
        for model_index, (weight, ws, sinv, M) in enumerate(
            zip(self.problem.weights, self.problem.workspaces, base.sinvs, base.Ms)
        ):
            lam, V = np.linalg.eigh((M + M.T) / 2.0)
            lmax = lam[-1] if lam.size else 0.0
            if lmax <= 0 or lam[0] <= RANK_TOL * lmax:
                return [self.value_add(uid, base) for uid in uids]
            Minv = (V / lam) @ V.T
            a = Minv @ c
            g0 = float(c @ a)
            n = len(base.order)
            F = ws.sigma_block(base.order, flat) if n else np.zeros((0, k * r))
            A = sinv @ F if n else F
            X1 = ws.X[base.order]
            X2 = ws.X[flat]
            gs = np.empty(k)
            if r == 1:
                s = ws.sigma_diag(flat) - np.einsum("ij,ij->j", F, A)
                U = X2 - A.T @ X1  # (k, P)
                t = U @ a
                q = np.einsum("ij,jk,ik->i", U, Minv, U)
                tr_delta = np.einsum("ij,ij->i", U, U)
                bad = s <= 1e-12 * ws.sigma_diag(flat)
                with np.errstate(divide="ignore", invalid="ignore"):
                    gs = g0 - t * t / (s + q)
                    tr = tr_delta / s
                guard = lam[0] <= RANK_TOL * (lmax + np.where(bad, 0.0, tr))
                for j in np.nonzero(bad | guard | ~np.isfinite(gs))[0]:
                    gj = self._add_value_single(model_index, base, uids[j])
                    if is_infeasible(gj):
                        infeasible[j] = True
                        gs[j] = 0.0
                    else:
                        gs[j] = gj
            else:
                for j, uid in enumerate(uids):
                    sl = slice(j * r, (j + 1) * r)
                    Fj = F[:, sl]
                    Aj = A[:, sl]
                    obs_j = flat[sl]
                    S = ws.sigma_block(obs_j, obs_j) - Fj.T @ Aj
                    Uj = X2[sl] - Aj.T @ X1
                    try:
                        cho = cho_factor((S + S.T) / 2.0, check_finite=False)
                    except np.linalg.LinAlgError:
                        infeasible[j] = True
                        gs[j] = 0.0
                        continue
                    delta = Uj.T @ cho_solve(cho, Uj, check_finite=False)
                    if lam[0] <= RANK_TOL * (lmax + np.trace(delta)):
                        gj = c_objective(M + delta, c)
                        if is_infeasible(gj):
                            infeasible[j] = True
                            gs[j] = 0.0
                        else:
                            gs[j] = gj
                        continue
                    B = S + Uj @ Minv @ Uj.T
                    v = Uj @ a
                    try:
                        gs[j] = g0 - float(v @ np.linalg.solve((B + B.T) / 2.0, v))
                    except np.linalg.LinAlgError:
                        infeasible[j] = True
                        gs[j] = 0.0
            totals += weight * gs
        return [INFEASIBLE if infeasible[j] else float(totals[j]) for j in range(k)]

    def _add_value_single(self, model_index, base, uid):
        # Per-model fallback for batch candidates that fail the fast-path
        # guards: full Schur delta plus the rank-checked objective.
        unit = self._unit(uid)
        new_obs = list(unit.obs_indices)
        ws = self.problem.workspaces[model_index]
        sinv = base.sinvs[model_index]
        F = ws.sigma_block(base.order, new_obs)
        S2 = ws.sigma_block(new_obs, new_obs)
        delta = schur_information_delta(sinv, F, S2, ws.X[base.order], ws.X[new_obs])
        if delta is None:
            return INFEASIBLE
        return c_objective(base.Ms[model_index] + delta, self.problem.c)

    def information_delta(self, uid, model_index: int = 0) -> np.ndarray:
        """delta_M for adding ``uid`` to the current design (one model)."""
        unit = self._unit(uid)
        new_obs = list(unit.obs_indices)
        ws = self.problem.workspaces[model_index]
        F = ws.sigma_block(self.order, new_obs)
        S2 = ws.sigma_block(new_obs, new_obs)
        delta = schur_information_delta(
            self.sinvs[model_index], F, S2, ws.X[self.order], ws.X[new_obs]
        )
        if delta is None:
            raise SingularMatrixError(
                f"adding unit {uid} makes the covariance numerically singular"
            )
        return delta

    # -- mutation ----------------------------------------------------------------

    def _bump(self):
        self._mutations += 1
        self._value = None
        if self._mutations % REFRESH_INTERVAL == 0:
            self._rebuild()

    def apply_add(self, uid, base: _Candidate | None = None, removed_uid=None):
        """Add ``uid``; when ``base`` is a removal snapshot, commit it first."""
        unit = self._unit(uid)
        if uid in self.selected:
            raise ConfigError(f"unit {uid} is already selected")
        if base is not None:
            self._commit_removal(base, removed_uid)
        new_obs = list(unit.obs_indices)
        for k, ws in enumerate(self.problem.workspaces):
            F = ws.sigma_block(self.order, new_obs)
            S2 = ws.sigma_block(new_obs, new_obs)
            delta = schur_information_delta(self.sinvs[k], F, S2, ws.X[self.order], ws.X[new_obs])
            if delta is None:
                raise SingularMatrixError(
                    f"adding unit {uid} makes the covariance numerically singular"
                )
            self.Ms[k] = self.Ms[k] + delta
            sinv = self.sinvs[k]
            grown = list(self.order)
            for j, obs in enumerate(new_obs):
                f = ws.sigma_block(grown, [obs])[:, 0]
                h = float(ws.sigma_block([obs], [obs])[0, 0])
                try:
                    sinv = kernels.extend_inverse(np.ascontiguousarray(sinv), f, h)
                except ValueError as exc:
                    raise SingularMatrixError(f"cannot add unit {uid}: {exc}") from exc
                grown.append(obs)
            self.sinvs[k] = sinv
        self.order.extend(new_obs)
        self.selected.add(uid)
        self.counts[self.problem.class_of[uid]] += 1
        self._bump()

    def _commit_removal(self, cand: _Candidate, uid):
        if uid is None or uid not in self.selected:
            raise ConfigError("removal snapshot must name a selected unit")
        self.order = list(cand.order)
        self.sinvs = list(cand.sinvs)
        self.Ms = list(cand.Ms)
        self.selected.discard(uid)
        self.counts[self.problem.class_of[uid]] -= 1

    def apply_remove(self, uid, snapshot: _Candidate | None = None):
        if uid not in self.selected:
            raise ConfigError(f"unit {uid} is not selected")
        if snapshot is None:
            snapshot = self.snapshot_remove(uid)
        self._commit_removal(snapshot, uid)
        self._bump()

    def apply_swap(self, out_uid, in_uid, snapshot: _Candidate | None = None):
        if snapshot is None:
            snapshot = self.snapshot_remove(out_uid)
        self.apply_add(in_uid, base=snapshot, removed_uid=out_uid)

    # -- consistency -------------------------------------------------------------

    def consistency_error(self) -> float:
        """Max relative deviation of the cached arrays from scratch recomputation."""
        err = 0.0
        for ws, sinv, M in zip(self.problem.workspaces, self.sinvs, self.Ms):
            sigma = ws.sigma(self.order)
            n = len(self.order)
            err = max(err, float(np.abs(sinv @ sigma - np.eye(n)).max()))
            X = ws.X[self.order]
            M_ref = X.T @ np.linalg.solve(sigma, X)
            scale = max(1.0, float(np.abs(M_ref).max()))
            err = max(err, float(np.abs(M - M_ref).max()) / scale)
        return err
