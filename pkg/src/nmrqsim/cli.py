"""Command-line front end.

Exit codes: 0 success, 2 input or configuration error, 3 numerical
verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .circuits import Circuit, CircuitError, compile_circuit, ghz_circuit, ghz_state, verify_compilation
from .molecule import Molecule, MoleculeError
from .pipeline import (
    COUPLING_VARIANTS,
    run_ghz,
    setup_tomography,
    tce_variant,
    tomography_round_trip,
)
from .pulse import NoiseConfig, PulseError, total_duration
from .qops import from_json_dict, to_json_dict
from .readout import (
    ReadoutError,
    Spectrum,
    deconvolve,
    fit_calibration,
    peaks_from_json,
    peaks_to_json,
    read_spectrum,
    write_spectrum,
)
from .thermal import ExtractionError, extract_pseudo_pure
from .tomography import TomographyError, fidelity, mermin_correlators

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3

#: verification threshold used when the isotropic carbon coupling is simulated
FULL_COUPLING_THRESHOLD = 0.1


class ConfigError(Exception):
    pass


class VerificationFailure(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    molecule: Molecule
    molecule_source: str
    noise: NoiseConfig
    dwell_s: float
    n_samples: int
    seed: int
    output_dir: Path
    coupling: str


# --------------------------------------------------------------------------
# output helpers


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def write_grid(path: Path, grid: np.ndarray) -> None:
    """8x8-style grid with 1-based row and column labels."""
    path.parent.mkdir(parents=True, exist_ok=True)
    n = grid.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [str(j + 1) for j in range(n)])
        for i, row in enumerate(grid):
            w.writerow([str(i + 1)] + [repr(float(x)) for x in row])


def read_grid(path: Path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]])


def write_density_grids(out: Path, stem: str, rho: np.ndarray) -> None:
    write_grid(out / f"{stem}_real.csv", rho.real)
    write_grid(out / f"{stem}_imag.csv", rho.imag)


# --------------------------------------------------------------------------
# configuration


def _add_common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=["tce"], default=None, help="built-in molecule (default tce)")
    src.add_argument("--molecule", type=Path, help="molecule JSON file")
    p.add_argument(
        "--coupling",
        choices=COUPLING_VARIANTS,
        default="secular",
        help="tce carbon-pair coupling: weak-coupling ZZ (secular) or isotropic (full)",
    )
    p.add_argument("--noise", choices=["on", "off"], default="off", help="phase damping during delays")
    p.add_argument("--t2-source", choices=["t2", "t2star"], default="t2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("nmrqsim_out"), help="output directory ($NMRQSIM_OUT wins)")
    p.add_argument("--dwell", type=float, default=5e-4, help="dwell time in seconds")
    p.add_argument("--samples", type=int, default=4096, help="FID length in samples")


def build_config(args: argparse.Namespace) -> RunConfig:
    if args.molecule is not None:
        try:
            m = Molecule.from_json(args.molecule.read_text())
        except FileNotFoundError:
            raise ConfigError(f"molecule file not found: {args.molecule}") from None
        except (json.JSONDecodeError, KeyError, TypeError, MoleculeError) as exc:
            raise ConfigError(f"invalid molecule file {args.molecule}: {exc}") from None
        source = str(args.molecule)
    else:
        m = tce_variant(args.coupling)
        source = f"preset:tce/{args.coupling}"
    if args.dwell <= 0:
        raise ConfigError("--dwell must be positive")
    if args.samples < 16:
        raise ConfigError("--samples must be at least 16")
    out = Path(os.environ.get("NMRQSIM_OUT") or args.out)
    return RunConfig(
        molecule=m,
        molecule_source=source,
        noise=NoiseConfig(enabled=args.noise == "on", t2_source=args.t2_source),
        dwell_s=args.dwell,
        n_samples=args.samples,
        seed=args.seed,
        output_dir=out,
        coupling=args.coupling,
    )


def _verify_threshold(cfg: RunConfig, explicit: float | None) -> float:
    if explicit is not None:
        return explicit
    has_flip_flop = any(c.form == "isotropic" for c in cfg.molecule.couplings)
    return FULL_COUPLING_THRESHOLD if has_flip_flop else 1e-8


def _config_dict(cfg: RunConfig) -> dict:
    return {
        "molecule": cfg.molecule_source,
        "noise": {"enabled": cfg.noise.enabled, "t2_source": cfg.noise.t2_source},
        "acquisition": {"dwell_s": cfg.dwell_s, "n_samples": cfg.n_samples},
        "seed": cfg.seed,
        "version": __version__,
    }


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig) -> int:
    m = cfg.molecule
    if m.n_spins != 3:
        raise ConfigError(f"the GHZ simulation needs a 3-spin molecule, got {m.n_spins}")
    threshold = _verify_threshold(cfg, args.verify_threshold)
    try:
        comp = compile_circuit(ghz_circuit(star=args.star), m)
    except CircuitError as exc:
        raise ConfigError(str(exc)) from None
    out = cfg.output_dir
    runs = {"ideal": run_ghz(m, None, args.star, threshold, comp)}
    if cfg.noise.enabled:
        runs["noisy"] = run_ghz(m, cfg.noise, args.star, threshold, comp)
    ideal = runs["ideal"]

    write_json(out / "sequence.json", comp.sequence.to_list())
    write_json(out / "thermal.json", to_json_dict(ideal.thermal))
    summary = {
        "config": _config_dict(cfg),
        "verification": ideal.verification.to_dict(),
        "duration_s": ideal.duration_s,
        "cnots": [c.to_dict() for c in comp.cnots],
        "runs": {},
    }
    for name, run in runs.items():
        write_json(out / f"final_{name}.json", to_json_dict(run.final))
        write_json(out / f"diagnostic_{name}.json", run.diagnostic.to_dict())
        if run.extraction is not None:
            write_json(out / f"extraction_{name}.json", run.extraction.to_dict())
        summary["runs"][name] = {
            "fidelity": run.fidelity,
            "extracted_fidelity": run.extracted_fidelity,
            "extraction_error": run.extraction_error,
            "eigenvalues_in": run.diagnostic.eigs_in,
            "eigenvalues_out": run.diagnostic.eigs_out,
            "max_mismatch": run.diagnostic.max_abs_mismatch,
            "mermin": run.mermin,
        }
    write_json(out / "summary.json", summary)
    _print_summary(summary)
    if not ideal.verification.passed:
        raise VerificationFailure(
            f"compiled GHZ sequence rejected: distance {ideal.verification.distance:.3e} "
            f"(threshold {threshold:.1e})"
        )
    return EXIT_OK


def cmd_compile(args, cfg: RunConfig) -> int:
    m = cfg.molecule
    if args.circuit is None:
        circuit = ghz_circuit(star=args.star)
    else:
        try:
            circuit = Circuit.from_dict(read_json(args.circuit))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid circuit file {args.circuit}: {exc}") from None
    threshold = _verify_threshold(cfg, args.verify_threshold)
    try:
        comp = compile_circuit(circuit, m, rz_mode=args.rz_mode)
    except CircuitError as exc:
        raise ConfigError(str(exc)) from None
    ver = verify_compilation(circuit, comp.sequence, m, threshold=threshold)
    report = ver.to_dict()
    report["duration_s"] = total_duration(comp.sequence)
    report["cnots"] = [c.to_dict() for c in comp.cnots]
    report["n_elements"] = len(comp.sequence)
    write_json(cfg.output_dir / "sequence.json", comp.sequence.to_list())
    write_json(cfg.output_dir / "verification.json", report)
    status = "pass" if ver.passed else "FAIL"
    print(f"{status}: distance {ver.distance:.3e}, duration {report['duration_s'] * 1e3:.3f} ms")
    if not ver.passed:
        raise VerificationFailure(f"verification failed (threshold {threshold:.1e})")
    return EXIT_OK


def cmd_tomo(args, cfg: RunConfig) -> int:
    m = cfg.molecule
    if m.n_spins != 3:
        raise ConfigError(f"tomography of the GHZ state needs a 3-spin molecule, got {m.n_spins}")
    if not 0 <= args.spectral_noise < 1:
        raise ConfigError("--spectral-noise must lie in [0, 1)")
    threshold = _verify_threshold(cfg, None)
    ghz = run_ghz(m, cfg.noise if cfg.noise.enabled else None, verify_threshold=threshold)
    setup = setup_tomography(m, cfg.dwell_s, cfg.n_samples)
    rng = np.random.default_rng(cfg.seed)
    run = tomography_round_trip(setup, ghz.final, args.spectral_noise, rng)
    rec = run.reconstruction
    out = cfg.output_dir
    try:
        extraction = extract_pseudo_pure(rec.rho, ghz.thermal)
    except ExtractionError as exc:
        extraction = None
        extraction_error = str(exc)
    else:
        extraction_error = None

    report = {
        "config": _config_dict(cfg) | {"spectral_noise": args.spectral_noise},
        "plan": [e.label for e in setup.plan.entries],
        "n_acquisitions": setup.plan.n_acquisitions,
        "measurement_matrix": {
            "rows": setup.matrix.shape[0],
            "cols": setup.matrix.shape[1],
            "rank": setup.matrix.rank,
            "condition_number": setup.matrix.condition_number,
        },
        "calibration": {
            c: {"peaks": [p.__dict__ for p in cal.peaks], "residual_norm": cal.fit.residual_norm,
                "converged": cal.fit.converged}
            for c, cal in setup.calibrations.items()
        },
        "coefficients": dict(zip(setup.matrix.labels, rec.coefficients)),
        "reconstructed": to_json_dict(rec.rho),
        "residuals": {
            "anti_hermitian": rec.anti_hermitian_residual,
            "total": rec.residual_norm,
            "per_entry": list(rec.acquisition_residuals),
        },
        "reconstruction_error": {"max_entry": run.max_error, "relative": run.relative_error},
        "extraction": None if extraction is None else extraction.to_dict(),
        "extraction_error": extraction_error,
    }
    if extraction is not None:
        report["fidelity"] = fidelity(extraction.extracted_state, ghz_state(3))
        report["mermin"] = mermin_correlators(extraction.extracted_state)
    write_json(out / "tomography.json", report)

    for i, ch, spec in run.spectra:
        stem = f"acq{i:02d}_{ch}"
        s = Spectrum(setup.acquisition.readouts[ch].freqs_hz, spec, ch)
        write_spectrum(out / "spectra" / f"{stem}.csv", s)
        _write_magnitude(out / "plot" / f"{stem}_magnitude.csv", s.freqs_hz, spec)
    write_density_grids(out / "plot", "reconstructed", rec.rho)
    write_density_grids(out / "plot", "truth", ghz.final)
    if extraction is not None:
        write_density_grids(out / "plot", "measured", extraction.extracted_state)
        target = ghz_state(3)
        write_density_grids(out / "plot", "theory", np.outer(target, target.conj()))

    print(f"rank {setup.matrix.rank}, condition number {setup.matrix.condition_number:.3f}")
    print(f"reconstruction max error {run.max_error:.3e} (relative {run.relative_error:.3e})")
    if extraction is not None:
        print(f"fidelity {report['fidelity']:.6f}")
    else:
        print(f"extraction refused: {extraction_error}")
    return EXIT_OK


def _write_magnitude(path: Path, freqs: np.ndarray, amps: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "abs_amplitude"])
        for f, a in zip(freqs, np.abs(amps)):
            w.writerow([repr(float(f)), repr(float(a))])


def cmd_fit(args, cfg: RunConfig) -> int:
    try:
        spec = read_spectrum(args.spectrum)
    except FileNotFoundError:
        raise ConfigError(f"spectrum file not found: {args.spectrum}") from None
    except ReadoutError as exc:
        raise ConfigError(str(exc)) from None
    try:
        guesses = peaks_from_json(Path(args.guesses).read_text())
    except FileNotFoundError:
        raise ConfigError(f"guess file not found: {args.guesses}") from None
    except (json.JSONDecodeError, ReadoutError) as exc:
        raise ConfigError(f"invalid guess file {args.guesses}: {exc}") from None
    if not guesses:
        raise ConfigError("at least one peak guess is required")
    try:
        fit = fit_calibration(spec, guesses)
        dec = deconvolve(spec, fit.peaks)
    except ReadoutError as exc:
        raise ConfigError(str(exc)) from None
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "peaks.json").write_text(peaks_to_json(fit.peaks))
    write_json(
        out / "fit.json",
        {
            "residual_norm": fit.residual_norm,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "diverged": fit.diverged,
            "deconvolution": {
                "coefficients_re": dec.coefficients.real,
                "coefficients_im": dec.coefficients.imag,
                "residual_norm": dec.residual_norm,
                "condition_number": dec.condition_number,
            },
        },
    )
    for p in fit.peaks:
        print(f"{p.center_hz:12.4f} Hz  T2* {p.t2star_s:.4f} s  amp {p.amplitude:.4g}  phase {p.phase_rad:+.4f}")
    print(f"residual {fit.residual_norm:.3e} after {fit.iterations} iterations")
    return EXIT_OK


REPORT_FIELDS = ("fidelity", "eigenvalues_in", "eigenvalues_out", "max_mismatch", "mermin")


def cmd_report(args, cfg: RunConfig) -> int:
    run_dir = Path(args.run_dir)
    summary = read_json(run_dir / "summary.json")
    try:
        runs = summary["runs"]
        name = "noisy" if "noisy" in runs else "ideal"
        chosen = runs[name]
        missing = [f for f in REPORT_FIELDS if f not in chosen]
        if missing:
            raise KeyError(", ".join(missing))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{run_dir / 'summary.json'}: missing report field(s) {exc}") from None
    target = ghz_state(3)
    theory = np.outer(target, target.conj())
    extraction_file = run_dir / f"extraction_{name}.json"
    if extraction_file.exists():
        measured = from_json_dict(read_json(extraction_file)["extracted_state"])
    else:
        measured = from_json_dict(read_json(run_dir / f"final_{name}.json"))
    plot = Path(args.run_dir) / "plot"
    write_density_grids(plot, "theory", theory)
    write_density_grids(plot, "measured", measured)

    lines = [f"run: {name}"]
    for key in REPORT_FIELDS:
        v = chosen[key]
        if isinstance(v, dict):
            v = ", ".join(f"{k}={x:+.6f}" for k, x in sorted(v.items()))
        elif isinstance(v, list):
            v = " ".join(f"{x:+.4f}" for x in v)
        elif isinstance(v, float):
            v = f"{v:.9f}"
        lines.append(f"{key:<16} {v}")
    if "duration_s" in summary:
        lines.append(f"{'duration_s':<16} {summary['duration_s']:.6f}")
    text = "\n".join(lines) + "\n"
    (run_dir / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    for name, run in summary["runs"].items():
        print(f"[{name}] fidelity {run['fidelity']:.9f}  max eigenvalue mismatch {run['max_mismatch']:.3e}")
    print(f"duration {summary['duration_s'] * 1e3:.3f} ms, verification "
          f"{'pass' if summary['verification']['pass'] else 'FAIL'}")


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmrqsim", description="NMR GHZ-state simulator and analysis tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="thermal state -> GHZ sequence -> diagnostics")
    _add_common(p)
    p.add_argument("--star", action="store_true", help="use the star form of the GHZ circuit")
    p.add_argument("--verify-threshold", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compile", help="compile a circuit to a pulse sequence and verify it")
    _add_common(p)
    p.add_argument("circuit", type=Path, nargs="?", help="circuit JSON (default: built-in GHZ)")
    p.add_argument("--star", action="store_true", help="built-in GHZ in star form")
    p.add_argument("--rz-mode", choices=["virtual", "composite"], default="virtual")
    p.add_argument("--verify-threshold", type=float, default=None)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("tomo", help="synthetic tomography round trip of the prepared GHZ state")
    _add_common(p)
    p.add_argument("--spectral-noise", type=float, default=0.0,
                   help="noise std per component as a fraction of the calibration peak height")
    p.set_defaults(func=cmd_tomo)

    p = sub.add_parser("fit", help="fit Lorentzian lines to a spectrum file")
    _add_common(p)
    p.add_argument("spectrum", type=Path, help="spectrum CSV with JSON sidecar")
    p.add_argument("guesses", type=Path, help="peak guesses JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="summary table and density-matrix grids of a simulate run")
    _add_common(p)
    p.add_argument("run_dir", type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = build_config(args)
        return args.func(args, cfg)
    except (ConfigError, MoleculeError, PulseError, TomographyError, CircuitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
