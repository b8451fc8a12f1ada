"""gapweaver command line.

Every subcommand writes its artifacts plus ``manifest-<command>.json`` (the
resolved configuration, output paths and their SHA-256 sums) into ``--out``.
A run can be replayed from a saved configuration with ``--config run.json``;
the file holds ``{"command": ..., <flag>: <value>, ...}`` using the long flag
names with dashes replaced by underscores.

Set GAPWEAVER_THREADS to cap the number of threads used by compiled kernels
and FFTs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as gio

log = logging.getLogger("gapweaver")

COMMANDS = ("bands", "bifurcate", "coeffs", "solve", "continue", "diag-kernel", "verify-eps",
            "evolve", "nonres")


class UsageError(Exception):
    pass


def _floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _omega_range(text):
    parts = [float(t) for t in str(text).split(":")]
    if len(parts) != 3 or parts[2] == 0:
        raise UsageError("--omega-range expects start:stop:step with a non-zero step")
    return parts


def apply_thread_cap():
    n = os.environ.get("GAPWEAVER_THREADS")
    if not n:
        return None
    try:
        n = max(1, int(n))
    except ValueError:
        raise UsageError("GAPWEAVER_THREADS must be a positive integer") from None
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    try:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except Exception:  # numba missing or thread layer unavailable
        pass
    return n


# ---------------------------------------------------------------------------
# helpers shared by subcommands
# ---------------------------------------------------------------------------

def _potential(cfg):
    from .potential import load_potential
    return load_potential(cfg["potential"])


def _coefficients(cfg, p):
    from .resonance import ResonanceCoefficients, compute_coefficients
    if cfg.get("coeffs"):
        return ResonanceCoefficients.from_dict(gio.read_json(cfg["coeffs"]))
    return compute_coefficients(p, grid_n=cfg["grid_n"])


def _out(cfg, name):
    return os.path.join(cfg["out"], name)


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, results)
# ---------------------------------------------------------------------------

def cmd_bands(cfg):
    from .bloch1d import compute_bands
    from .resonance import find_bifurcation_eta
    p = _potential(cfg)
    eta = cfg.get("eta")
    if eta is None:
        eta, _ = find_bifurcation_eta(p, grid_n=cfg["grid_n"])
    nb = cfg["n_bands"]
    ks = np.linspace(-0.5, 0.5, cfg["k_points"])
    bd = compute_bands(p, eta, ks, nb, cfg["grid_n"])
    out1 = gio.write_csv(_out(cfg, "bands.csv"), ["k"] + [f"rho{n + 1}" for n in range(nb)],
                         [(k, *bd.bands[:, i]) for i, k in enumerate(ks)],
                         header={"eta": eta, "grid_n": cfg["grid_n"]})
    # 2D surfaces along Gamma -> X -> M -> Gamma: sums rho_n(k1) + rho_m(k2)
    m = cfg["k_points"]
    t = np.linspace(0.0, 1.0, m)
    legs = [(0.5 * t, 0 * t), (0.5 + 0 * t, 0.5 * t), (0.5 - 0.5 * t, 0.5 - 0.5 * t)]
    k1 = np.concatenate([legs[0][0], legs[1][0][1:], legs[2][0][1:]])
    k2 = np.concatenate([legs[0][1], legs[1][1][1:], legs[2][1][1:]])
    s = np.arange(k1.size) / (m - 1)
    b1 = compute_bands(p, eta, k1, nb, cfg["grid_n"]).bands
    b2 = compute_bands(p, eta, k2, nb, cfg["grid_n"]).bands
    n2d = cfg["n_surfaces"]
    rows = []
    for i in range(k1.size):
        sums = np.sort((b1[:, i][:, None] + b2[:, i][None, :]).ravel())[:n2d]
        rows.append((s[i], k1[i], k2[i], *sums))
    out2 = gio.write_csv(_out(cfg, "bands2d.csv"),
                         ["s", "k1", "k2"] + [f"E{n + 1}" for n in range(n2d)], rows,
                         header={"eta": eta, "path": "Gamma-X-M-Gamma"})
    return [out1, out2], {"eta": eta, "lambda": bd.lam.tolist(), "mu": bd.mu.tolist()}


def cmd_bifurcate(cfg):
    from .bloch1d import edge_eigenvalues
    from .resonance import find_bifurcation_eta
    p = _potential(cfg)
    eta0, omega0 = find_bifurcation_eta(p, tuple(cfg["bracket"]), cfg["grid_n"])
    lam, mu = edge_eigenvalues(p, eta0, 4, cfg["grid_n"])
    res = {"eta0": eta0, "omega0": omega0, "lambda1": float(lam[0]), "mu1": float(mu[0]),
           "mu2": float(mu[1]), "grid_n": cfg["grid_n"]}
    print(f"eta0   = {eta0:.6f}\nlambda1= {lam[0]:.6f}\nmu1    = {mu[0]:.6f}\n"
          f"mu2    = {mu[1]:.6f}\nomega0 = {omega0:.6f}")
    return [gio.write_json(_out(cfg, "bifurcation.json"), res)], res


def format_coefficients(c):
    lines = [f"eta0 = {c.eta0:.4f}, omega0 = {c.omega0:.4f}",
             f"beta1  = {c.beta1:8.4f}   beta2  = {c.beta2:8.4f}",
             f"gamma1 = {c.gamma1:.4e}   gamma2 = {c.gamma2:.4e}",
             f"gamma3 = {c.gamma3:.4e}   gamma4 = {c.gamma4:.4e}",
             f"alpha1 = {c.alpha1:8.4f}   alpha2 = {c.alpha2:8.4f}   alpha3 = {c.alpha3:8.4f}"]
    return "\n".join(lines)


def cmd_coeffs(cfg):
    from .resonance import compute_coefficients
    p = _potential(cfg)
    eta0 = cfg.get("eta0")
    if eta0 is None and cfg.get("bifurcation"):
        eta0 = gio.read_json(cfg["bifurcation"])["eta0"]
    c = compute_coefficients(p, eta0=eta0, grid_n=cfg["grid_n"])
    print(format_coefficients(c))
    return [gio.write_json(_out(cfg, "coeffs.json"), c.to_dict())], c.to_dict()


def cmd_solve(cfg):
    from .cme2d.newton import solve_class
    p = _potential(cfg)
    c = _coefficients(cfg, p)
    f = solve_class(cfg["class"], cfg["omega"], c, D=cfg["D"], dy=cfg["dy"], sign=cfg["sign"],
                    tol=cfg["tol"])
    path = f.save(_out(cfg, "field.bin"))
    res = {"class": f.class_tag, "omega": f.omega, "amplitude": f.amplitude(),
           "power": f.power(), "boundary_ratio": f.boundary_ratio()}
    print(json.dumps(res, indent=2))
    return [path], res


def cmd_continue(cfg):
    from .cme2d.core import CMEField
    from .cme2d.newton import continue_in_omega, solve_cme_newton
    start, stop, step = _omega_range(cfg["omega_range"])
    f = CMEField.load(cfg["from"])
    if abs(f.omega - start) > 1e-12:
        f = solve_cme_newton(f.copy(omega=start), cfg["tol"])
    fields = _out(cfg, "branch")
    br = continue_in_omega(f, stop, abs(step), cfg["tol"], out_dir=fields)
    rows = [(om, amp, os.path.relpath(pth, cfg["out"]) if pth else "")
            for om, amp, pth in br.rows()]
    csv = gio.write_csv(_out(cfg, "branch.csv"), ["omega", "amplitude", "field_path"], rows,
                        header={"class": br.class_tag, "end_reason": br.end_reason})
    outs = [csv] + [pth for pth in br.paths if pth]
    return outs, {"points": len(rows), "end_reason": br.end_reason}


def cmd_diag_kernel(cfg):
    from .cme2d.core import CMEField
    from .jacobian import kernel_report
    f = CMEField.load(cfg["field"])
    rep = kernel_report(f, tuple(cfg["D"]), tol=cfg["tol"])
    csv = gio.write_csv(_out(cfg, "kernel.csv"),
                        ["D", "lambda_J1", "lambda_J2", "lambda_J3", "lambda_J4",
                         "subspace_angle"], rep.rows())
    verdict = {"verdict": rep.verdict, "verified": rep.verified, "computed": rep.computed,
               "notes": rep.notes}
    js = gio.write_json(_out(cfg, "kernel.json"), verdict)
    print(rep.verdict)
    return [csv, js], verdict


def cmd_verify_eps(cfg):
    from .elliptic2d import convergence_study
    rep = convergence_study(cfg["class"], cfg["omega"], cfg["eps"], potential=cfg["potential"],
                            D_y=cfg["D_y"], tol=cfg["tol"], sign=cfg["sign"],
                            shared_box=not cfg["per_eps_box"])
    csv = gio.write_csv(_out(cfg, "convergence.csv"), ["epsilon", "error", "grid_n"], rep.rows())
    js = gio.write_json(_out(cfg, "convergence.json"), rep.to_dict())
    print(f"slope = {rep.slope:.4f} (complete: {rep.complete})")
    return [csv, js], rep.to_dict()


def cmd_evolve(cfg):
    outs, res = [], {}
    if cfg.get("from"):
        from .cme2d.core import CMEField
        from .cme2d.evolution import integrate_cme_time
        f = CMEField.load(cfg["from"])
        evo = integrate_cme_time(f, cfg["T"], cfg["dt"])
        outs.append(evo.field.save(_out(cfg, "evolved.bin")))
        outs.append(gio.write_csv(_out(cfg, "evolution.csv"), ["T", "power", "max_amplitude"],
                                  list(zip(evo.times, evo.power, evo.max_amplitude))))
        res["power_drift"] = evo.power_drift
    if cfg.get("track_eps"):
        from .elliptic2d import tracking_error
        p = _potential(cfg)
        c = _coefficients(cfg, p)
        rows = []
        for eps in cfg["track_eps"]:
            tr = tracking_error(eps, coeffs=c, potential=cfg["potential"], dt=cfg["gp_dt"],
                                T0=cfg["T"], corrector=not cfg["no_corrector"])
            rows.append((eps, tr.error, tr.grid_n, tr.mass_drift))
        outs.append(gio.write_csv(_out(cfg, "tracking.csv"),
                                  ["epsilon", "error", "grid_n", "mass_drift"], rows,
                                  header={"norm": "max", "corrector": not cfg["no_corrector"]}))
        res["tracking"] = rows
    if not outs:
        raise UsageError("evolve needs --from <field> and/or --track-eps")
    print(json.dumps(res, indent=2, default=float))
    return outs, res


def cmd_nonres(cfg):
    from .resonance import check_nonresonance, find_bifurcation_eta
    p = _potential(cfg)
    eta0, omega0 = cfg.get("eta0"), cfg.get("omega0")
    if eta0 is None or omega0 is None:
        eta0, omega0 = find_bifurcation_eta(p, grid_n=cfg["grid_n"])
    rep = check_nonresonance(p, eta0, omega0, cfg["n_max"], cfg["grid_n"])
    d = rep.to_dict()
    d.pop("excluded")
    print(f"minimum = {rep.minimum:.6g} ({rep.status})")
    return [gio.write_json(_out(cfg, "nonres.json"), rep.to_dict())], d


HANDLERS = {"bands": cmd_bands, "bifurcate": cmd_bifurcate, "coeffs": cmd_coeffs,
            "solve": cmd_solve, "continue": cmd_continue, "diag-kernel": cmd_diag_kernel,
            "verify-eps": cmd_verify_eps, "evolve": cmd_evolve, "nonres": cmd_nonres}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--potential", default="one-minus-cos",
                        help="builtin name or JSON descriptor file")
    common.add_argument("--grid-n", type=int, default=512, help="points per period (1D solves)")
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--out", default="gapweaver-out")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="gapweaver", description=__doc__.split("\n")[0])
    ap.add_argument("--config", help="replay a saved JSON run configuration")
    sub = ap.add_subparsers(dest="command")

    s = sub.add_parser("bands", parents=[common], help="1D bands and the 2D diagram")
    s.add_argument("--eta", type=float)
    s.add_argument("--n-bands", type=int, default=6)
    s.add_argument("--n-surfaces", type=int, default=6)
    s.add_argument("--k-points", type=int, default=21)

    s = sub.add_parser("bifurcate", parents=[common], help="locate eta0 where the gap opens")
    s.add_argument("--bracket", type=_floats, default=[0.05, 0.5])

    s = sub.add_parser("coeffs", parents=[common], help="coupled-mode coefficients")
    s.add_argument("--eta0", type=float)
    s.add_argument("--bifurcation", help="bifurcation.json from a previous run")

    s = sub.add_parser("solve", parents=[common], help="solve one soliton class")
    s.add_argument("--class", required=True)
    s.add_argument("--omega", type=float, required=True)
    s.add_argument("--sign", type=int, default=1)
    s.add_argument("--D", type=float, default=20.0)
    s.add_argument("--dy", type=float, default=0.14)
    s.add_argument("--coeffs", help="coeffs.json (computed if absent)")

    s = sub.add_parser("continue", parents=[common], help="continue a field in omega")
    s.add_argument("--from", required=True)
    s.add_argument("--omega-range", required=True, help="start:stop:step")

    s = sub.add_parser("diag-kernel", parents=[common], help="Jacobian kernel diagnostics")
    s.add_argument("--field", required=True)
    s.add_argument("--D", type=_floats, default=[8, 12, 16, 20])

    s = sub.add_parser("verify-eps", parents=[common], help="eps-convergence against the 2D problem")
    s.add_argument("--class", required=True)
    s.add_argument("--omega", type=float, required=True)
    s.add_argument("--eps", type=_floats, required=True)
    s.add_argument("--sign", type=int, default=1)
    s.add_argument("--D-y", type=float, default=8.0)
    s.add_argument("--per-eps-box", action="store_true")

    s = sub.add_parser("evolve", parents=[common], help="time evolution and tracking")
    s.add_argument("--from")
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--track-eps", type=_floats)
    s.add_argument("--gp-dt", type=float, default=0.02)
    s.add_argument("--no-corrector", action="store_true")
    s.add_argument("--coeffs")

    s = sub.add_parser("nonres", parents=[common], help="non-resonance check")
    s.add_argument("--eta0", type=float)
    s.add_argument("--omega0", type=float)
    s.add_argument("--n-max", type=int, default=20)
    return ap


def _config_from_file(parser, path):
    try:
        raw = gio.read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("command") not in COMMANDS:
        raise UsageError("config must be a JSON object with a valid 'command'")
    argv = [raw["command"]]
    for key, val in raw.items():
        if key == "command" or val is None or val is False:
            continue
        flag = "--" + key.replace("_", "-")
        if key in ("D_y",):
            flag = "--D-y"
        elif key == "D" and isinstance(val, (int, float)):
            flag = "--D"
        if val is True:
            argv.append(flag)
        elif isinstance(val, list):
            argv += [flag, ",".join(repr(float(v)) for v in val)]
        else:
            argv += [flag, str(val)]
    return parser.parse_args(argv)


def run(command, cfg):
    """Execute one subcommand from a resolved config dict; returns the exit status."""
    os.makedirs(cfg["out"], exist_ok=True)
    outputs, results = HANDLERS[command](cfg)
    cfg_path = gio.write_json(os.path.join(cfg["out"], f"config-{command}.json"),
                              dict(cfg, command=command))
    gio.write_manifest(cfg["out"], command, dict(cfg), [cfg_path, *outputs], results)
    return 0


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            args = _config_from_file(parser, args.config)
        if not args.command:
            raise UsageError("no command given")
        cfg = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False)
                            else logging.WARNING, format="%(name)s: %(message)s")
        apply_thread_cap()
        return run(args.command, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gapweaver: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical failures are reported, not tracebacked
        from .errors import GapweaverError
        if isinstance(exc, GapweaverError):
            print(f"gapweaver: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
