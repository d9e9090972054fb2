"""
Exact reversibility checks on tabular chains and MDPs: stationary distributions, detailed
balance, dynamic reversibility through conjugate states, and the kernel-level condition for
dynamically action reversible MDPs
"""

from collections import deque
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np

from .envs import TabularMDP, build_velocity_chain, validate_involution
from .workbench_models import (
    ContractViolationError, NoUniqueStationaryError, ViolationReport, WorkbenchConfig
)

logger = logging.getLogger(__name__)

NO_ACTION = -1


def _validate_kernel(kernel) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ContractViolationError(f"Chain kernel must be square, got shape {kernel.shape}")
    if np.any(kernel < 0) or not np.allclose(kernel.sum(axis=1), 1.0, rtol=0.0, atol=1e-12):
        raise ContractViolationError("Chain kernel rows must be probability vectors")
    return kernel


def _reaches_all(adjacency: np.ndarray, start: int = 0) -> bool:
    seen = np.zeros(adjacency.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for succ in np.flatnonzero(adjacency[node] & ~seen):
            seen[succ] = True
            queue.append(succ)
    return bool(seen.all())


def is_irreducible(kernel) -> bool:
    """Whether the support graph of the kernel is strongly connected"""
    support = _validate_kernel(kernel) > 0
    return _reaches_all(support) and _reaches_all(support.T)


def stationary_distribution(kernel, max_iterations: int = WorkbenchConfig.POWER_ITERATION_CAP,
                            residual: float = WorkbenchConfig.POWER_ITERATION_RESIDUAL) -> np.ndarray:
    """
    Stationary distribution of an irreducible chain by power iteration

    Iterates the lazy kernel (P + I) / 2 from the uniform distribution. It has the same
    stationary distribution as P and is aperiodic, so periodic chains converge too.

    Args:
        kernel: Row-stochastic single-action transition table
        max_iterations: Iteration cap
        residual: Stop once max |pi P - pi| falls to this value

    Returns:
        Probability vector pi with pi P = pi

    Raises:
        NoUniqueStationaryError: If the chain is not irreducible or iteration does not converge
    """
    kernel = _validate_kernel(kernel)
    if not is_irreducible(kernel):
        raise NoUniqueStationaryError("Chain is not irreducible; the stationary distribution is not unique")

    n = kernel.shape[0]
    lazy = 0.5 * (kernel + np.eye(n))
    pi = np.full(n, 1.0 / n)
    for iteration in range(int(max_iterations)):
        if np.max(np.abs(pi @ kernel - pi)) <= residual:
            logger.debug(f"Power iteration converged after {iteration} iterations")
            return pi
        pi = pi @ lazy
        pi /= pi.sum()
    raise NoUniqueStationaryError(f"Power iteration did not reach residual {residual} "
                                  f"within {int(max_iterations)} iterations")


def _resolve_stationary(kernel: np.ndarray, stationary: Optional[Sequence[float]]) -> np.ndarray:
    if stationary is None:
        return stationary_distribution(kernel)
    pi = np.asarray(stationary, dtype=np.float64)
    if pi.shape != (kernel.shape[0],) or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ContractViolationError("Supplied stationary measure is not a probability vector over the states")
    if np.max(np.abs(pi @ kernel - pi)) > 1e-9:
        raise ContractViolationError("Supplied measure is not stationary for the kernel")
    return pi


def _report(violation: np.ndarray, witness: Tuple[int, ...], tolerance: float) -> ViolationReport:
    max_violation = float(violation.max()) if violation.size else 0.0
    return ViolationReport(max_violation=max_violation, witness=witness,
                           passed=max_violation <= tolerance, tolerance=tolerance)


def _pair_report(violation: np.ndarray, tolerance: float) -> ViolationReport:
    s, s_next = np.unravel_index(int(np.argmax(violation)), violation.shape)
    return _report(violation, (int(s), NO_ACTION, int(s_next)), tolerance)


def check_detailed_balance(kernel, tolerance: float = WorkbenchConfig.DEFAULT_TOLERANCE,
                           stationary: Optional[Sequence[float]] = None) -> ViolationReport:
    """
    Largest |pi(s) P(s'|s) - pi(s') P(s|s')| over all state pairs

    Args:
        kernel: Row-stochastic single-action transition table
        tolerance: Pass threshold for the largest residual
        stationary: Optional invariant measure to use instead of power iteration; it must
            satisfy pi P = pi

    Raises:
        NoUniqueStationaryError: If no measure is supplied and the chain is reducible
    """
    kernel = _validate_kernel(kernel)
    pi = _resolve_stationary(kernel, stationary)
    flux = pi[:, None] * kernel
    return _pair_report(np.abs(flux - flux.T), tolerance)


def check_dynamic_reversibility(kernel, state_involution: Sequence[int],
                                tolerance: float = WorkbenchConfig.DEFAULT_TOLERANCE,
                                stationary: Optional[Sequence[float]] = None) -> ViolationReport:
    """
    Largest |pi(s) P(s'|s) - pi(f(s')) P(f(s)|f(s'))| over all state pairs

    With f the identity this is exactly the detailed balance residual.

    Raises:
        ContractViolationError: If the involution is not a self-inverse permutation
        NoUniqueStationaryError: If no measure is supplied and the chain is reducible
    """
    kernel = _validate_kernel(kernel)
    f = np.asarray(state_involution, dtype=np.int64)
    validate_involution(f, kernel.shape[0], "state")
    pi = _resolve_stationary(kernel, stationary)
    flux = pi[:, None] * kernel
    reversed_flux = flux[np.ix_(f, f)].T  # [s, s'] -> flux[f(s'), f(s)]
    return _pair_report(np.abs(flux - reversed_flux), tolerance)


def check_darmdp(mdp: TabularMDP, tolerance: float = WorkbenchConfig.DEFAULT_TOLERANCE) -> ViolationReport:
    """
    Largest |P(s'|s,a) - P(f(s)|f(s'),f(a))| over admissible (s, a, s')

    A triple counts when both (s, a) and (f(s'), f(a)) are admissible pairs of the MDP. The
    witness is the first maximizer in (action, state, next_state) order, reported as
    (state, action, next_state).
    """
    validate_involution(mdp.state_involution, mdp.n_states, "state")
    validate_involution(mdp.action_involution, mdp.n_actions, "action")
    f, fa = mdp.state_involution, mdp.action_involution

    reversed_kernel = mdp.kernel[fa][:, f][:, :, f].transpose(0, 2, 1)  # [a, s, s'] -> P[fa(a), f(s'), f(s)]
    reversed_admissible = mdp.admissible[fa][:, f]                     # [a, s'] -> admissible[fa(a), f(s')]
    mask = mdp.admissible[:, :, None] & reversed_admissible[:, None, :]
    violation = np.abs(mdp.kernel - reversed_kernel) * mask

    a, s, s_next = np.unravel_index(int(np.argmax(violation)), violation.shape)
    report = _report(violation, (int(s), int(a), int(s_next)), tolerance)
    logger.debug(f"DARMDP residual {report.max_violation:.3e} at {report.witness}")
    return report


def conjugate_mdp(mdp: TabularMDP) -> TabularMDP:
    """MDP with kernel, reward and admissibility rewritten through both involutions"""
    f, fa = mdp.state_involution, mdp.action_involution
    return replace(
        mdp,
        kernel=mdp.kernel[fa][:, f][:, :, f],
        reward=mdp.reward[f],
        admissible=mdp.admissible[fa][:, f],
        state_labels=tuple(mdp.state_labels[i] for i in f),
    )


def action_slice(mdp: TabularMDP, action: int) -> np.ndarray:
    """Single-action Markov chain P[a]"""
    if not 0 <= action < mdp.n_actions:
        raise ContractViolationError(f"Action index {action} outside [0, {mdp.n_actions})")
    return mdp.kernel[action].copy()


def format_report(name: str, report: ViolationReport) -> str:
    """Render `CHECK <name> <passed|failed> max_violation=<float> witness=<s,a,s'>`"""
    s, a, s_next = report.witness
    action = "-" if a == NO_ACTION else str(a)
    status = "passed" if report.passed else "failed"
    return f"CHECK {name} {status} max_violation={report.max_violation:.6e} witness={s},{action},{s_next}"


def verify_velocity_chain(halfwidth: int = 4, breaking: bool = False,
                          tolerance: float = WorkbenchConfig.DEFAULT_TOLERANCE) -> List[Tuple[str, ViolationReport]]:
    """
    Run the kernel-level check and the single-action chain checks on a velocity chain

    The zero-action slice is a permutation, so the uniform measure is stationary and is
    supplied directly. With breaking=True the slice has an absorbing state and no stationary
    measure that charges every state, so only the kernel-level check runs.
    """
    mdp = build_velocity_chain(halfwidth, breaking)
    results = [("darmdp", check_darmdp(mdp, tolerance))]

    if breaking:
        logger.warning("Skipping chain-level checks: the breaking chain has an absorbing crash state")
        return results

    zero_action = mdp.action_values.index(0.0)
    chain = action_slice(mdp, zero_action)
    uniform = np.full(mdp.n_states, 1.0 / mdp.n_states)
    results.append(("dynamic_reversibility", check_dynamic_reversibility(
        chain, mdp.state_involution, tolerance, stationary=uniform)))
    results.append(("detailed_balance", check_detailed_balance(chain, tolerance, stationary=uniform)))
    return results
