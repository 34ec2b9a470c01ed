"""The acceptance battery: twelve criteria, each a list of report rows plus a runtime budget."""
from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..estimators import circulant_apply, mmse_estimator, empirical_risk
from ..inverse import explicit, mask
from ..losses import (DivergenceProbe, c_unsure_loss, draw_probe, general_unsure_loss, hudson_loss,
                      mc_divergence, pg_unsure_loss, sure_loss, unsure_loss)
from ..models import (CirculantGaussian, DiagonalGaussian, IsotropicGaussian, NoisyMarginal, WeightFunction,
                      fisher_information, mmse_value, named_prior, risk_quadrature, sample_measurements)
from ..multipliers import solve_circulant, solve_diagonal, solve_isotropic
from ..nn import MLP
from ..score import CorrelatedMarginal, ScoreField, accumulate_moments, analytic_field, fd_divergence
from ..train import Family, saddle_loss_grad
from .config import ExperimentConfig
from .experiments import run as run_experiment
from .report import CSV_HEADER, Row, RunReport, abs_row, max_row

PRIOR_NAMES = ("two_deltas", "gaussian", "spike_slab")


@dataclass
class Criterion:
    number: int
    title: str
    check: Callable[[int], list[Row]]
    budget_s: Optional[float] = None


@dataclass
class CriterionResult:
    number: int
    title: str
    rows: list[Row]
    elapsed: float
    budget_s: Optional[float]

    @property
    def within_budget(self) -> bool:
        return self.budget_s is None or self.elapsed < self.budget_s

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.passed for r in self.rows) and self.within_budget

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        bad = sum(not r.passed for r in self.rows)
        budget = "" if self.budget_s is None else f", {self.elapsed:.1f}s of {self.budget_s:.0f}s budget"
        return f"[{status}] {self.number:2d}. {self.title} ({len(self.rows) - bad}/{len(self.rows)} rows{budget})"


def _seed(master: int, label: str) -> int:
    return ExperimentConfig("inverse_demo", master).stream_seed(f"acceptance/{label}")


def _rows_from(experiment: str, master: int, prefix: str) -> list[Row]:
    rep = run_experiment(ExperimentConfig(experiment, master))
    return [Row(f"{prefix}.{r.metric}", r.value, r.target, r.tolerance, r.passed, r.provenance) for r in rep.rows]


# ---------------------------------------------------------------------------

def c01_table(master):
    return _rows_from("oracle_table", master, "c01")


def c02_zed_risk(master):
    return _rows_from("zed_risk_sweep", master, "c02")


def c03_identity_chain(master):
    rows = []
    for name in PRIOR_NAMES:
        for sigma in (0.1, 0.25, 0.5):
            m = NoisyMarginal(named_prior(name), sigma)
            s2 = sigma**2
            lhs = 1.0 / fisher_information(m)  # n / tr H with n = 1
            mid = s2**2 / (s2 - mmse_value(m))
            eta = lhs
            rhs = risk_quadrature(m, lambda y: y + eta * m.score(y)) + s2
            tag = f"c03.{name}.sigma={sigma:g}"
            rows.append(abs_row(f"{tag}.n_over_trH_vs_mmse_form", lhs, mid, 1e-4, "derived"))
            rows.append(abs_row(f"{tag}.mmse_form_vs_zed_risk_plus_s2", mid, rhs, 1e-4, "derived"))
    return rows


def c04_oracles(master):
    return _rows_from("solver_suite", master, "c04")


def _zed_divergence_row(label, div) -> Row:
    mean = float(np.mean(div))
    se = float(np.std(div, ddof=1) / np.sqrt(len(div)))
    # value is the mean divergence in standard errors
    return max_row(f"c05.{label}.mean_div_in_stderr", abs(mean) / se, 4.0, "derived")


def c05_zero_divergence(master, draws: int = 10000, moment_samples: int = 800000):
    rows = []
    prior = named_prior("two_deltas")
    # isotropic: exact divergence n + eta sum_i s'(y_i)
    n, sigma = 4, 0.25
    m = NoisyMarginal(prior, sigma)
    mom = accumulate_moments(analytic_field(m), sample_measurements(prior, IsotropicGaussian(sigma), n,
                                                                     moment_samples, _seed(master, "c05/iso/H")))
    eta = float(solve_isotropic(mom).eta[0])
    y = sample_measurements(prior, IsotropicGaussian(sigma), n, draws, _seed(master, "c05/iso")).samples
    rows.append(_zed_divergence_row("isotropic", n + eta * np.sum(m.score_derivative(y), axis=1)))
    # diagonal: one marginal per pixel
    sigmas = (0.2, 0.25, 0.3, 0.35)
    margs = [NoisyMarginal(prior, s) for s in sigmas]
    score = lambda y: np.stack([mg.score(y[..., i]) for i, mg in enumerate(margs)], axis=-1)
    field_ = ScoreField(score, "analytic", margs, len(sigmas))
    mom = accumulate_moments(field_, sample_measurements(prior, DiagonalGaussian(sigmas), len(sigmas),
                                                         moment_samples, _seed(master, "c05/diag/H")))
    eta_d = solve_diagonal(mom).eta
    y = sample_measurements(prior, DiagonalGaussian(sigmas), len(sigmas), draws, _seed(master, "c05/diag")).samples
    div = len(sigmas) + sum(eta_d[i] * margs[i].score_derivative(y[:, i]) for i in range(len(sigmas)))
    rows.append(_zed_divergence_row("diagonal", div))
    # circulant: correlated noise, exact mixture score, central-difference divergence
    n, r = 5, 2
    noise = CirculantGaussian((0.08, 0.2, 0.08))
    cm = CorrelatedMarginal(prior, noise.covariance(n))
    cfield = cm.field()
    mom = accumulate_moments(cfield, sample_measurements(prior, noise, n, moment_samples // 4,
                                                         _seed(master, "c05/circ/H")), r)
    eta_c = solve_circulant(mom, r).eta
    y = sample_measurements(prior, noise, n, draws, _seed(master, "c05/circ")).samples
    f = lambda v: v + circulant_apply(eta_c, cm.score(v))
    rows.append(_zed_divergence_row("circulant", fd_divergence(f, y, step=1e-5)))
    return rows


def c06_sure(master, count: int = 100000, n: int = 16, sigma: float = 0.25):
    rows = []
    for name in PRIOR_NAMES:
        prior = named_prior(name)
        m = NoisyMarginal(prior, sigma)
        est = mmse_estimator(m)
        data = sample_measurements(prior, IsotropicGaussian(sigma), n, count, _seed(master, f"c06/{name}"))
        probe = draw_probe(np.random.default_rng(_seed(master, f"c06/{name}/probe")), data.samples.shape)
        lv = sure_loss(est, data.samples, sigma**2, probe)
        sure = (lv.total + lv.constant) / n
        rows.append(Row(f"c06.{name}.sure_per_pixel", sure, empirical_risk(est, data),
                        "rel<=0.02", abs(sure / empirical_risk(est, data) - 1) <= 0.02, "derived"))
    return rows


def c07_mc_divergence(master, maps: int = 20, probes: int = 10000, n: int = 8):
    rng = np.random.default_rng(_seed(master, "c07"))
    rows = []
    for k in range(maps):
        M = rng.standard_normal((n, n))
        y = rng.standard_normal(n)
        b = rng.standard_normal((probes, n))
        est = mc_divergence(lambda v: v @ M.T, np.broadcast_to(y, b.shape), DivergenceProbe(b, 0.01))
        z = abs(float(np.mean(est)) - float(np.trace(M))) / (float(np.std(est, ddof=1)) / np.sqrt(probes))
        rows.append(max_row(f"c07.map{k:02d}.gap_in_stderr", z, 3.0, "derived"))
    return rows


def c08_reductions(master, count: int = 64, n: int = 10):
    rng = np.random.default_rng(_seed(master, "c08"))
    y = rng.standard_normal((count, n))
    probe = draw_probe(rng, y.shape)
    f = lambda v: v - 0.3 * np.tanh(2 * v) + 0.05 * np.roll(v, 1, axis=-1)
    eta = 0.173
    base = unsure_loss(f, y, eta, probe)
    variants = {
        "pg_gamma0": pg_unsure_loss(f, y, eta, 0.0, probe),
        "hudson_a1": hudson_loss(f, y, eta, WeightFunction((1.0,)), probe),
        "cunsure_r0": c_unsure_loss(f, y, np.array([eta]), probe),
        "general_identity": general_unsure_loss(f, y, explicit(np.eye(n)), eta, probe),
    }
    rows = []
    for name, lv in variants.items():
        same = (lv.total == base.total and lv.residual == base.residual
                and lv.divergence_term == base.divergence_term
                and np.array_equal(lv.per_sample["total"], base.per_sample["total"]))
        rows.append(Row(f"c08.{name}.bit_identical", float(lv.total - base.total), 0.0, "exact", same, "trivial"))
    return rows


def gradient_check(seed: int, family: Family, n: int = 4, batch: int = 5, h: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    net = MLP(n, n, (8, 8), residual=True, seed=seed, zero_last=False)
    m_in = family.op.m if family.name == "general" else n
    y = rng.standard_normal((batch, m_in))
    b = rng.standard_normal((batch, m_in))
    eta = np.array([0.3]) if family.name != "pg" else np.array([0.3, 0.1])
    lv, grads, scale = saddle_loss_grad(net, family, y, b, eta)
    g = MLP.flatten(grads)
    theta = net.get_flat()
    fd = np.zeros_like(theta)
    for i in range(len(theta)):
        for sgn in (1, -1):
            t = theta.copy()
            t[i] += sgn * h
            net.set_flat(t)
            val = saddle_loss_grad(net, family, y, b, eta)[0].total * batch * scale
            fd[i] += sgn * val / (2 * h)
    net.set_flat(theta)
    return float(np.linalg.norm(fd - g) / np.linalg.norm(g))


def c11_gradients(master):
    rows = []
    fams = {"unsure": Family("unsure"), "pg": Family("pg"),
            "general_mask": Family("general", op=mask((0, 2, 3), 4))}
    for name, fam in fams.items():
        for k in range(5):
            err = gradient_check(_seed(master, f"c11/{name}/{k}") % 2**31, fam)
            rows.append(max_row(f"c11.{name}.seed{k}.rel_err", err, 1e-4, "derived"))
    return rows


def c09_training(master):
    return _rows_from("train_denoiser", master, "c09")


def c10_plugin(master):
    return _rows_from("train_score_plugin", master, "c10")


CRITERIA = [
    Criterion(1, "table reproduction (MMSE / CV / ZED x three priors)", c01_table, 60.0),
    Criterion(2, "ZED risk identity across noise levels", c02_zed_risk, 120.0),
    Criterion(3, "multiplier identity chain", c03_identity_chain),
    Criterion(4, "solvers match brute-force oracles", c04_oracles, 30.0),
    Criterion(5, "zero expected divergence of ZED estimators", c05_zero_divergence),
    Criterion(6, "SURE unbiasedness for the MMSE estimator", c06_sure),
    Criterion(7, "Monte-Carlo divergence unbiasedness", c07_mc_divergence),
    Criterion(8, "degenerate losses reduce to UNSURE bit for bit", c08_reductions),
    Criterion(9, "saddle-point training on two deltas", c09_training, 300.0),
    Criterion(10, "learned score plug-in on the Gaussian prior", c10_plugin),
    Criterion(11, "reverse-mode gradients vs finite differences", c11_gradients),
]


def run_battery(master: int, only: Optional[list[int]] = None, echo: Optional[Callable[[str], None]] = None):
    results = []
    for c in CRITERIA:
        if only is not None and c.number not in only:
            continue
        t0 = time.perf_counter()
        rows = c.check(master)
        res = CriterionResult(c.number, c.title, rows, time.perf_counter() - t0, c.budget_s)
        if echo:
            echo(res.line())
        results.append(res)
    return results


def battery_csv(results) -> str:
    rep = RunReport("acceptance", "", {}, [r for res in results for r in res.rows])
    return rep.to_csv()


def run_suite(master: int, out_dir: Optional[str] = None, only: Optional[list[int]] = None,
              echo: Optional[Callable[[str], None]] = print, determinism: bool = True):
    """Run criteria 1-11, then rerun them to check byte-identical CSV output (criterion 12).

    Returns ``(results, csv_text)``; ``results`` holds one entry per criterion.
    """
    results = run_battery(master, only, echo)
    text = battery_csv(results)
    if determinism and (only is None or 12 in only):
        t0 = time.perf_counter()
        again = battery_csv(run_battery(master, [r.number for r in results], None))
        same = again == text
        res = CriterionResult(12, "determinism: repeated run gives byte-identical CSV",
                              [Row("c12.csv_byte_identical", float(same), 1.0, "exact", same, "trivial")],
                              time.perf_counter() - t0, None)
        if echo:
            echo(res.line())
        results.append(res)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "acceptance.csv"), "w", newline="") as fh:
            fh.write(battery_csv(results))
        with open(os.path.join(out_dir, "acceptance.timing.csv"), "w") as fh:
            fh.write("criterion,elapsed_s,budget_s,within_budget,pass\n")
            for r in results:
                fh.write(f"{r.number},{r.elapsed:.3f},{'' if r.budget_s is None else r.budget_s},"
                         f"{str(r.within_budget).lower()},{str(r.passed).lower()}\n")
    return results, text


__all__ = ["CRITERIA", "CSV_HEADER", "run_suite", "run_battery", "gradient_check"]
