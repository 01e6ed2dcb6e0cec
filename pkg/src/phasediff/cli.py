"""Command-line entry point: every pipeline as a config-driven, reproducible run.

Each run writes into its output directory the exact config used
(``config.json``), tabular results (CSV), structured results (JSON) and a
short human-readable ``summary.txt``. Angles are radians on disk.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
COMMANDS = ("qfi", "homodyne-scan", "anneal", "tomography", "mle", "tradeoff-scan")


class ConfigError(ValueError):
    pass


# configuration


def _from_dict(cls, doc: dict | None, where: str):
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(unknown)}")
    return cls(**doc)


@dataclass
class ProbeSpec:
    type: str = "qubit"
    n: int = 1
    theta: float = float(np.pi / 2)
    cutoff: int | None = None
    alpha_sq: float = 1.0

    def __post_init__(self):
        if self.type not in ("qubit", "noon", "hb", "split_photon", "coherent", "pair"):
            raise ConfigError(f"unknown probe type {self.type!r}")
        if self.n < 1:
            raise ConfigError("probe n must be >= 1")

    def photons(self) -> int:
        return {"noon": self.n, "hb": 2 * self.n, "split_photon": 1}.get(self.type, 1)

    def build(self):
        from phasediff.fockcore import (FockCutoff, QubitProbe, embed_qubit, make_holland_burnett, make_noon,
                                        make_split_photon)

        cutoff = FockCutoff(self.cutoff if self.cutoff is not None else self.photons())
        if self.type == "qubit":
            # single-photon embedding of the qubit model
            return embed_qubit(QubitProbe(self.theta, 0.0, 0.0), 1, cutoff)
        if self.type == "noon":
            return make_noon(self.n, cutoff)
        if self.type == "hb":
            return make_holland_burnett(self.n, cutoff)
        if self.type == "split_photon":
            return make_split_photon(cutoff)
        raise ConfigError(f"probe type {self.type!r} has no two-mode Fock representation")


@dataclass
class ChannelSpec:
    phi: float = float(np.pi / 2)
    delta: float = 0.25
    eta: float = 1.0


@dataclass
class MeasurementSpec:
    kind: str = "sagnac"
    k: float = 0.5
    v1: float = 1.0
    v2: float = 1.0

    def build(self):
        from phasediff.measurements import SagnacPovmSpec, sagnac_povm, DOUBLE_HOMODYNE

        if self.kind == "sagnac":
            return sagnac_povm(SagnacPovmSpec(self.k, self.v1, self.v2))
        if self.kind == "double_homodyne":
            return DOUBLE_HOMODYNE
        raise ConfigError(f"unknown measurement kind {self.kind!r}")


@dataclass
class GridSpec:
    deltas: list[float] = field(default_factory=lambda: [round(0.05 * i, 10) for i in range(21)])
    ks: list[float] = field(default_factory=lambda: [round(0.1 * i, 10) for i in range(1, 10)])
    etas: list[float] = field(default_factory=lambda: [1.0])
    probes: list[dict] = field(default_factory=list)


@dataclass
class AnnealSpec:
    problem: str = "pair"
    steps: int = 20_000
    restarts: int = 20
    n_weights: int = 21
    temperature0: float = 0.05
    cooling: float = 0.995
    epsilon0: float = 0.5
    epsilon_min: float = 1e-3
    entanglement_weight: float = 0.0


@dataclass
class TomographySpec:
    shots: int = 100
    fluctuation_sd: float = 0.02
    n_resamples: int = 200
    phase_offsets_deg: list[float] = field(default_factory=lambda: [0.0, 1.0])


@dataclass
class MleSpec:
    M: int = 10_000
    trials: int = 500
    grid: int = 60


@dataclass
class TradeoffSpec:
    n_povms: int = 200
    family: str = "equatorial"
    deltas: list[float] = field(default_factory=lambda: [0.1, 0.25, 0.5])


@dataclass
class RunConfig:
    command: str
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    out: str = ""
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    measurement: MeasurementSpec = field(default_factory=MeasurementSpec)
    grids: GridSpec = field(default_factory=GridSpec)
    anneal: AnnealSpec = field(default_factory=AnnealSpec)
    tomography: TomographySpec = field(default_factory=TomographySpec)
    mle: MleSpec = field(default_factory=MleSpec)
    tradeoff: TradeoffSpec = field(default_factory=TradeoffSpec)

    _sections = {"probe": ProbeSpec, "channel": ChannelSpec, "measurement": MeasurementSpec, "grids": GridSpec,
                 "anneal": AnnealSpec, "tomography": TomographySpec, "mle": MleSpec, "tradeoff": TradeoffSpec}

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        doc = dict(doc)
        if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {doc.get('schema_version')}; expected {SCHEMA_VERSION}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown field(s) in config: {', '.join(unknown)}")
        if "command" not in doc:
            raise ConfigError("config needs a command")
        for name, sec in cls._sections.items():
            try:
                doc[name] = _from_dict(sec, doc.get(name), name)
            except TypeError as exc:
                raise ConfigError(f"bad section {name}: {exc}") from None
        cfg = cls(**doc)
        if cfg.command not in COMMANDS:
            raise ConfigError(f"unknown command {cfg.command!r}")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


# output helpers


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _prepare(cfg: RunConfig) -> Path:
    out = Path(cfg.out or f"runs/{cfg.command}")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    return out


# commands


def cmd_qfi(cfg: RunConfig) -> dict:
    """Numeric and closed-form QFI over the delta grid."""
    from phasediff.channels import ChannelParams, encode_with_derivatives, qubit_with_derivatives
    from phasediff.estimation import delta_zero_limit, qfi_closed_form_qubit, qfi_coherent, qfi_matrix, qfi_noon

    out = _prepare(cfg)
    p = cfg.probe
    phi = cfg.channel.phi

    if p.type in ("qubit", "coherent"):
        scale = p.alpha_sq if p.type == "coherent" else 1.0

        def numeric(d):
            return scale * qfi_matrix(qubit_with_derivatives(p.theta, phi, d))

        def closed(d):
            return qfi_coherent(p.alpha_sq, p.theta, d) if p.type == "coherent" else qfi_closed_form_qubit(p.theta, d)
    elif p.type in ("noon", "hb", "split_photon"):
        state = p.build()

        def numeric(d):
            return qfi_matrix(encode_with_derivatives(state, ChannelParams(phi, d)))

        n = p.n if p.type == "noon" else 1
        closed = (lambda d: qfi_noon(n, d)) if p.type in ("noon", "split_photon") else None
    else:
        raise ConfigError(f"qfi does not support probe type {p.type!r}")

    rows, worst = [], 0.0
    for d in cfg.grids.deltas:
        h = delta_zero_limit(numeric) if d == 0 else numeric(d)
        c = closed(d) if closed else np.full((2, 2), np.nan)
        diff = float(np.max(np.abs(h - c))) if closed else float("nan")
        if closed:
            worst = max(worst, diff)
        rows.append([d, h[0, 0], h[1, 1], h[0, 1], c[0, 0], c[1, 1], diff, "limit" if d == 0 else "sld"])
    _write_csv(out / "qfi.csv", ["delta", "H11", "H22", "H12", "H11_closed", "H22_closed", "max_abs_diff", "method"],
               rows)
    result = {"probe": asdict(p), "max_abs_diff": worst if closed else None, "agrees_1e-9": bool(worst <= 1e-9)}
    _write_json(out / "qfi.json", result)
    (out / "summary.txt").write_text(
        f"QFI for probe {p.type} (n={p.n}) over {len(rows)} delta values\n"
        + (f"max |numeric - closed form| = {worst:.3e}\n" if closed else "no closed form for this probe\n")
    )
    return result


def _homodyne_row(state, phi, delta, eta, fisher: bool = True):
    from phasediff.channels import ChannelParams, encode_with_derivatives
    from phasediff.estimation import QuadratureNotConverged, classical_fi_continuous, qfi_matrix, tradeoff_report
    from phasediff.measurements import DOUBLE_HOMODYNE

    diff = encode_with_derivatives(state, ChannelParams.symmetric(phi, delta, eta))
    h_eta = qfi_matrix(diff)
    # ratios are taken against the loss-free QFI so that loss shows up as lost precision
    h0 = h_eta if eta == 1.0 else qfi_matrix(encode_with_derivatives(state, ChannelParams(phi, delta)))
    if not fisher:
        return None, h_eta, h0, None, True
    converged = True
    try:
        F = classical_fi_continuous(diff, DOUBLE_HOMODYNE)
    except QuadratureNotConverged as exc:
        F, converged = exc.fine, False
    rep = tradeoff_report(F, h0) if delta > 0 else None
    return F, h_eta, h0, rep, converged


def homodyne_rows(state, phi, deltas, etas):
    from phasediff.estimation import delta_zero_limit, tradeoff_report

    rows = []
    for eta in etas:
        for d in deltas:
            if d == 0:
                # the homodyne FI is evaluated on the boundary directly (it is not
                # analytic in delta^2 there); only the QFI needs the delta -> 0 limit
                F, _, _, _, conv = _homodyne_row(state, phi, 0.0, eta)

                def qfis(dd, eta=eta):
                    _, h_eta, h0, _, _ = _homodyne_row(state, phi, dd, eta, fisher=False)
                    return np.stack([h_eta, h0])

                h_eta, h0 = delta_zero_limit(qfis)
                rep = tradeoff_report(F, h0)
            else:
                F, h_eta, h0, rep, conv = _homodyne_row(state, phi, d, eta)
            rows.append({"probe": state.label, "eta": eta, "delta": d, "F11": F[0, 0], "F12": F[0, 1],
                         "F22": F[1, 1], "H11": h_eta[0, 0], "H22": h_eta[1, 1], "H11_lossless": h0[0, 0],
                         "H22_lossless": h0[1, 1], "ratio_phi": rep.ratio_phi, "ratio_delta": rep.ratio_delta,
                         "sum": rep.sum, "var_phi_norm": rep.var_phi_norm, "var_delta_norm": rep.var_delta_norm,
                         "converged": conv})
    return rows


def noon_scaling_check(deltas, phi: float = 0.3, n: int = 2) -> dict:
    """Double-homodyne FI of N00N(n) at delta equals n^2 times the split-photon FI at n*delta."""
    from phasediff.channels import ChannelParams, encode_with_derivatives
    from phasediff.estimation import classical_fi_continuous
    from phasediff.fockcore import FockCutoff, make_noon, make_split_photon
    from phasediff.measurements import DOUBLE_HOMODYNE

    noon, single = make_noon(n, FockCutoff(n)), make_split_photon(FockCutoff(1))
    worst = 0.0
    for d in deltas:
        if d == 0:
            continue
        fn = classical_fi_continuous(encode_with_derivatives(noon, ChannelParams(phi, d)), DOUBLE_HOMODYNE)
        f1 = classical_fi_continuous(encode_with_derivatives(single, ChannelParams(n * phi, n * d)), DOUBLE_HOMODYNE)
        worst = max(worst, float(np.max(np.abs(fn - n * n * f1)) / max(np.max(np.abs(fn)), 1e-300)))
    return {"n": n, "max_rel_err": worst, "passed": bool(worst <= 1e-6)}


def cmd_homodyne_scan(cfg: RunConfig) -> dict:
    out = _prepare(cfg)
    specs = [ProbeSpec(**p) for p in cfg.grids.probes] if cfg.grids.probes else [cfg.probe]
    rows = []
    for spec in specs:
        rows += homodyne_rows(spec.build(), cfg.channel.phi, cfg.grids.deltas, cfg.grids.etas)
    header = list(rows[0])
    _write_csv(out / "homodyne.csv", header, [[r[h] for h in header] for r in rows])
    scaling = noon_scaling_check([d for d in cfg.grids.deltas if 0 < d <= 0.5][:5], cfg.channel.phi)
    flagged = [(r["probe"], r["eta"], r["delta"]) for r in rows if not r["converged"]]
    result = {"rows": len(rows), "unconverged": flagged, "noon_scaling": scaling,
              "max_sum": max(r["sum"] for r in rows), "min_sum": min(r["sum"] for r in rows)}
    _write_json(out / "homodyne.json", {"summary": result, "rows": rows})
    (out / "summary.txt").write_text(
        f"double homodyne scan: {len(rows)} rows, ratio sums in [{result['min_sum']:.6f}, {result['max_sum']:.6f}]\n"
        f"N00N(2) scaling check: max relative deviation {scaling['max_rel_err']:.2e}\n"
        f"unconverged quadrature rows: {len(flagged)}\n"
    )
    return result


def _anneal_config(cfg: RunConfig):
    from phasediff.annealer import AnnealConfig

    a = cfg.anneal
    weights = tuple(np.round(np.linspace(0.0, 1.0, a.n_weights), 10)) if a.n_weights > 1 else (0.5,)
    return AnnealConfig(steps=a.steps, epsilon0=a.epsilon0, epsilon_min=a.epsilon_min, temperature0=a.temperature0,
                        cooling=a.cooling, weights=weights, restarts=a.restarts,
                        entanglement_weight=a.entanglement_weight, seed=cfg.seed)


def cmd_anneal(cfg: RunConfig) -> dict:
    from phasediff.annealer import anneal_frontier, fock_sector_problem, pair_problem, qubit_ancilla_problem
    from phasediff.channels import ChannelParams

    out = _prepare(cfg)
    delta = cfg.channel.delta
    kind = cfg.anneal.problem
    if kind == "pair":
        problem = pair_problem(delta)
    elif kind == "qubit_ancilla":
        problem = qubit_ancilla_problem(delta)
    elif kind == "fock":
        problem = fock_sector_problem(cfg.probe.build(),
                                      ChannelParams.symmetric(cfg.channel.phi, delta, cfg.channel.eta))
    else:
        raise ConfigError(f"unknown anneal problem {kind!r}")
    res = anneal_frontier(problem, _anneal_config(cfg), delta)
    (out / "frontier.csv").write_text(res.to_csv())
    (out / "frontier.json").write_text(res.to_json())
    best = res.best_total()
    result = {"problem": problem.label, "best_sum": best.total, "best_x": best.x, "best_y": best.y,
              "best_entanglement_weighed": best.entanglement_weighed, "pareto_points": len(res.pareto_points())}
    _write_json(out / "anneal.json", result)
    (out / "summary.txt").write_text(
        f"annealed frontier for {problem.label} at delta = {delta:g} rad ({np.degrees(delta):.1f} deg)\n"
        f"best x + y = {best.total:.4f} (x = {best.x:.4f}, y = {best.y:.4f}), "
        f"weighed entanglement {best.entanglement_weighed:.3f}\n"
    )
    return result


def cmd_tomography(cfg: RunConfig) -> dict:
    from phasediff.tomolab import scan_csv, tomography_scan

    out = _prepare(cfg)
    t, m = cfg.tomography, cfg.measurement
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for offset, child in zip(t.phase_offsets_deg, rng.spawn(len(t.phase_offsets_deg))):
        rows += tomography_scan(cfg.grids.ks, m.v1, m.v2, cfg.channel.delta, offset, t.shots, t.fluctuation_sd,
                                t.n_resamples, child)
    (out / "figure3.csv").write_text(scan_csv(rows))
    result = {"rows": len(rows), "max_sum": max(r.x + r.y for r in rows)}
    _write_json(out / "tomography.json", {"summary": result, "rows": [asdict(r) for r in rows]})
    (out / "summary.txt").write_text(
        f"tomography scan over k = {cfg.grids.ks}, phase offsets {t.phase_offsets_deg} deg\n"
        f"largest x + y = {result['max_sum']:.4f}\n"
    )
    return result


def cmd_mle(cfg: RunConfig) -> dict:
    from phasediff.fockcore import QubitProbe
    from phasediff.channels import ChannelParams
    from phasediff.tomolab import mle_parameter_simulation

    out = _prepare(cfg)
    ch, m = cfg.channel, cfg.mle
    meas = cfg.measurement.build()
    rng = np.random.default_rng(cfg.seed)
    if cfg.probe.type == "qubit":
        probe, params = QubitProbe(cfg.probe.theta, ch.phi, ch.delta), None
    else:
        probe, params = cfg.probe.build(), ChannelParams(ch.phi, ch.delta)
    rep = mle_parameter_simulation(probe, meas, m.M, m.trials, rng, params=params, grid=m.grid)
    _write_csv(out / "estimates.csv", ["trial", "phi_hat", "delta_hat"],
               [[i, e[0], e[1]] for i, e in enumerate(rep.estimates)])
    d = rep.to_dict()
    d.pop("estimates")
    _write_json(out / "mle.json", d)
    (out / "summary.txt").write_text(
        f"MLE over {m.trials} trials of M = {m.M} at phi = {ch.phi:.6g} rad, delta = {ch.delta:.6g} rad\n"
        f"Var * M * F = {rep.var_times_mf.tolist()}, off-diagonal z = {rep.offdiag_z:.2f}, "
        f"boundary hits {len(rep.boundary_trials)}\n"
    )
    return d


def cmd_tradeoff_scan(cfg: RunConfig) -> dict:
    from phasediff.channels import qubit_with_derivatives
    from phasediff.estimation import classical_fi_discrete, qfi_closed_form_qubit, tradeoff_report
    from phasediff.measurements import random_equatorial_povm, random_qubit_povm

    out = _prepare(cfg)
    t = cfg.tradeoff
    if t.family not in ("equatorial", "general", "mixed"):
        raise ConfigError(f"unknown POVM family {t.family!r}")
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for i in range(t.n_povms):
        fam = t.family if t.family != "mixed" else ("equatorial" if i % 2 == 0 else "general")
        povm = random_equatorial_povm(rng) if fam == "equatorial" else random_qubit_povm(rng)
        for d in t.deltas:
            diff = qubit_with_derivatives(np.pi / 2, cfg.channel.phi, d)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                F = classical_fi_discrete(diff, povm)
            rep = tradeoff_report(F, qfi_closed_form_qubit(np.pi / 2, d))
            rows.append([i, fam, len(povm), d, rep.ratio_phi, rep.ratio_delta, rep.sum, rep.var_sum, int(rep.singular)])
    _write_csv(out / "tradeoff.csv",
               ["povm", "family", "outcomes", "delta", "ratio_phi", "ratio_delta", "sum", "var_sum", "singular"], rows)
    max_sum = max(r[6] for r in rows)
    result = {"evaluations": len(rows), "max_sum": max_sum, "within_bound": bool(max_sum <= 1 + 1e-9)}
    _write_json(out / "tradeoff.json", result)
    (out / "summary.txt").write_text(f"{t.n_povms} random {t.family} POVMs x {len(t.deltas)} deltas: "
                                     f"max ratio sum {max_sum:.12f}\n")
    return result


HANDLERS = {"qfi": cmd_qfi, "homodyne-scan": cmd_homodyne_scan, "anneal": cmd_anneal,
            "tomography": cmd_tomography, "mle": cmd_mle, "tradeoff-scan": cmd_tradeoff_scan}


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasediff", description="Joint phase and phase-diffusion estimation runs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=str)
        p.add_argument("--delta", type=float, help="diffusion amplitude (rad)")
        p.add_argument("--k", type=float, help="four-outcome POVM splitting")
        p.add_argument("--eta", type=float, help="detection efficiency")
        p.add_argument("--noon-n", type=int, help="use a N00N probe with this N")
        p.add_argument("--hb-n", type=int, help="use a Holland-Burnett probe built from |n,n>")
        p.add_argument("--cutoff", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    doc = json.loads(args.config.read_text()) if args.config else {}
    if doc.get("command", args.command) != args.command:
        raise ConfigError(f"config is for command {doc['command']!r}, not {args.command!r}")
    doc["command"] = args.command
    cfg = RunConfig.from_dict(doc)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.delta is not None:
        cfg.channel.delta = args.delta
        if args.command == "qfi" or args.command == "homodyne-scan":
            cfg.grids.deltas = [args.delta]
    if args.k is not None:
        cfg.measurement.k = args.k
        cfg.grids.ks = [args.k]
    if args.eta is not None:
        cfg.channel.eta = args.eta
        cfg.grids.etas = [args.eta]
    if args.noon_n is not None:
        cfg.probe = ProbeSpec("noon", args.noon_n, cutoff=cfg.probe.cutoff)
    if args.hb_n is not None:
        cfg.probe = ProbeSpec("hb", args.hb_n, cutoff=cfg.probe.cutoff)
    if args.cutoff is not None:
        cfg.probe.cutoff = args.cutoff
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        result = HANDLERS[cfg.command](cfg)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        code = 2 if isinstance(exc, (ConfigError, json.JSONDecodeError)) else 1
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
        return code
    sys.stdout.write(json.dumps(result, default=_jsonable, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
