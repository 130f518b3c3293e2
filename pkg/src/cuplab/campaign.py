"""Randomised bound-verification campaign over small random CMDPs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .bounds import TOL, DegenerateDenominator, bound_report, lambda0_penalties
from .cmdp import SoftmaxPolicy, build_random_cmdp

RATIO_TOL = 1e-10

# checks whose failure makes the campaign exit non-zero
HARD_CHECKS = ("theorem1", "prop1", "prop2", "prop3_order", "identities", "cpo_ratio")
DIAGNOSTICS = ("theorem1_direct", "lemma1")

COLUMNS = (
    "cmdp", "cmdp_seed", "pair", "n_states", "n_actions", "lambda",
    "j_diff", "j_cost_diff", "l_minus", "l_plus", "l_minus_direct", "l_plus_direct",
    "prop1", "prop2", "prop1_kl", "prop2_kl", "chi_k", "epsilon_v", "epsilon_c",
    "classic_gap", "prop4_gap", "penalty_gae", "penalty_cpo", "lemma1_lhs", "lemma1_rhs",
    "t_max", "tail_bound",
    "pass_theorem1", "pass_theorem1_direct", "pass_prop1", "pass_prop2", "pass_prop3_order",
    "pass_identities", "pass_cpo_ratio", "pass_lemma1", "denom_flag",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


def campaign_instances(campaign, seed: int):
    """Yield ``(index, cmdp_seed, cmdp, [(pi_new, pi_old), ...])`` deterministically."""
    lo_s, hi_s = campaign.state_range
    lo_a, hi_a = campaign.action_range
    for i in range(campaign.n_cmdps):
        rng = np.random.default_rng([int(seed), i])
        S = int(rng.integers(lo_s, hi_s + 1))
        A = int(rng.integers(lo_a, hi_a + 1))
        cmdp_seed = int(rng.integers(2**31))
        cmdp = build_random_cmdp(S, A, cmdp_seed)
        pairs = [(SoftmaxPolicy(rng.normal(size=(S, A))), SoftmaxPolicy(rng.normal(size=(S, A))))
                 for _ in range(campaign.pairs_per_cmdp)]
        yield i, cmdp_seed, cmdp, pairs


def evaluate_pair(cmdp, pi_new, pi_old, lam: float) -> dict:
    rep = bound_report(cmdp, pi_new, pi_old, lam)
    row = {
        "j_diff": rep.j_diff, "j_cost_diff": rep.j_cost_diff,
        "l_minus": rep.l_minus, "l_plus": rep.l_plus,
        "l_minus_direct": rep.l_minus_direct, "l_plus_direct": rep.l_plus_direct,
        "prop1": rep.prop1_lower, "prop2": rep.prop2_cost_upper,
        "prop1_kl": rep.kl_prop1_lower, "prop2_kl": rep.kl_prop2_upper,
        "chi_k": rep.expected_kl, "epsilon_v": rep.epsilon_v, "epsilon_c": rep.epsilon_c,
        "classic_gap": rep.classic_gap, "prop4_gap": rep.prop4_gap,
        "penalty_gae": None, "penalty_cpo": None,
        "lemma1_lhs": rep.lemma1_lhs, "lemma1_rhs": rep.lemma1_rhs,
        "t_max": rep.t_max, "tail_bound": rep.tail_bound,
        "pass_theorem1": rep.pass_theorem1, "pass_theorem1_direct": rep.pass_theorem1_direct,
        "pass_prop1": rep.pass_prop1, "pass_prop2": rep.pass_prop2,
        "pass_prop3_order": rep.pass_prop3_order, "pass_identities": rep.pass_identities,
        "pass_cpo_ratio": None, "pass_lemma1": rep.lemma1_lhs <= rep.lemma1_rhs + TOL,
        "denom_flag": rep.denom_flag,
    }
    if lam == 0.0:
        ours, cpo = lambda0_penalties(cmdp, pi_new, pi_old)
        row["penalty_gae"], row["penalty_cpo"] = ours, cpo
        target = cpo * (1.0 - cmdp.gamma)
        row["pass_cpo_ratio"] = abs(ours - target) <= RATIO_TOL * max(abs(ours), abs(target), 1e-300)
    return row


@dataclass
class CampaignResult:
    rows: list = field(default_factory=list)

    def failures(self, check: str, lam=None) -> int:
        key = f"pass_{check}"
        return sum(1 for r in self.rows
                   if r[key] is not None and not r[key] and (lam is None or r["lambda"] == lam))

    @property
    def hard_violations(self) -> int:
        return sum(self.failures(c) for c in HARD_CHECKS)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])
        return buf.getvalue()

    def summary(self) -> str:
        lams = sorted({r["lambda"] for r in self.rows})
        checks = HARD_CHECKS + DIAGNOSTICS
        head = ["lambda", "rows"] + [f"fail_{c}" for c in checks] + ["max_identity_gap", "denom_flag_rate"]
        lines = ["  ".join(head)]
        for lam in lams:
            sub = [r for r in self.rows if r["lambda"] == lam]
            gap = max(max(r["classic_gap"], r["prop4_gap"]) for r in sub)
            rate = float(np.mean([r["denom_flag"] for r in sub]))
            cells = [f"{lam:g}", str(len(sub))] + [str(self.failures(c, lam)) for c in checks]
            cells += [f"{gap:.3e}", f"{rate:.3f}"]
            lines.append("  ".join(cells))
        return "\n".join(lines)


def run_campaign(campaign, seed: int) -> CampaignResult:
    result = CampaignResult()
    for i, cmdp_seed, cmdp, pairs in campaign_instances(campaign, seed):
        for j, (pi_new, pi_old) in enumerate(pairs):
            for lam in campaign.lambdas:
                base = {"cmdp": i, "cmdp_seed": cmdp_seed, "pair": j,
                        "n_states": cmdp.n_states, "n_actions": cmdp.n_actions, "lambda": float(lam)}
                try:
                    row = evaluate_pair(cmdp, pi_new, pi_old, float(lam))
                except DegenerateDenominator:
                    row = {c: None for c in COLUMNS}
                    row.update({c: False for c in COLUMNS if c.startswith("pass_")})
                    row.update(classic_gap=np.nan, prop4_gap=np.nan, denom_flag=True)
                result.rows.append({**row, **base})
    return result
