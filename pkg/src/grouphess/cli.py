"""Experiment command line.

Subcommands:

* ``run``      - optimize a configured problem, writing trace.csv/trace.json,
  final parameters, and a manifest that reproduces the run byte-for-byte;
* ``inspect``  - export the group-level curvature matrix and its inverse as
  heatmap-ready JSON plus per-block CSVs (weight-weight, bias-bias,
  weight-bias);
* ``check``    - run the derivative test battery against finite differences
  and the cost audit, writing a pass/fail report;
* ``config``   - print the documented defaults.

Exit codes: 0 ok, 2 config error, 3 runtime abort (partial trace kept),
4 failed check.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import engine
from .engine import EvaluationError, ParamVector, evaluate, gradient
from .optimizers import (
    METHODS,
    SolverError,
    StepConfig,
    run,
    traces_to_csv,
    traces_to_json,
)
from .partition import Partition, canonical_partition, discrete_partition, trivial_partition
from .problems import (
    CsvSchema,
    DataError,
    MlpSpec,
    QuadraticProblem,
    QuadraticSpec,
    load_csv,
    make_mlp,
    make_rosenbrock,
    mlp_labels,
    synth_dataset,
)
from .summaries import pseudo_gradient, pseudo_hessian, summary_tensor, taylor_term

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULT_CONFIG = {
    "problem": {
        "kind": "quadratic",          # quadratic | rosenbrock | mlp
        "size": 6,                    # quadratic only
        "eig_lo": 0.1,
        "eig_hi": 10.0,
        "widths": [2, 8, 8, 8, 2],    # mlp only
        "activation": "tanh",         # tanh | softplus
        "loss": "mse",                # mse | softmax-cross-entropy
        "init_scale": 1.0,
        "dataset": {
            "kind": "moons",          # moons | blobs | csv
            "n": 100,
            "seed": None,             # defaults to the top-level seed
            "noise": None,            # per-kind default when omitted
            "path": None,             # csv only
            "label_column": "label",
        },
    },
    "method": "partitioned",          # gd | cauchy | newton | partitioned
    "partition": "canonical",         # trivial | discrete | canonical | file:PATH
    "seed": 0,
    "out": "out",
    "exports": {
        "trace_json": True,
        "final_params": True,
    },
    "step": {
        "damping": 1.0,
        "regularization_eps": 0.0,
        "cauchy_on_failure": True,
        "max_iterations": 100,
        "grad_tolerance": 1e-8,
        "backtracking": False,
        "reg_mode": "exact",
        "reg_samples": 256,
        "dense_budget": 512,
    },
    "check": {
        "order": 2,
        "directions": 5,
        "tolerances": {},             # per-check overrides, e.g. gradient-fd: 1e-6
    },
}

CHECK_TOLERANCES = {
    "gradient-fd": 1e-6,
    "hessian-oracle": 1e-5,
    "sum-collapse": 1e-10,
    "symmetry": 1e-10,
    "footnote-identity": 1e-10,
    "pass-audit": 0.0,
}


def _merge(defaults, override, path="config"):
    if override is None:
        return defaults
    if not isinstance(defaults, dict):
        return override
    if not isinstance(override, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(override).__name__}")
    if not defaults:  # open mapping (e.g. tolerance overrides)
        return dict(override)
    out = dict(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"{path}: unknown key '{key}'")
        out[key] = _merge(defaults[key], value, f"{path}.{key}")
    return out


def load_config(path: str | None) -> dict:
    """Resolve a YAML config file (or a previously written manifest) against
    the documented defaults."""
    user: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config file: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
        if "config" in user and "result" in user:  # a run manifest
            user = user["config"]
    cfg = _merge(DEFAULT_CONFIG, user)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    kind = cfg["problem"]["kind"]
    if kind not in ("quadratic", "rosenbrock", "mlp"):
        raise ConfigError(f"problem.kind '{kind}' invalid (quadratic, rosenbrock, mlp)")
    if cfg["method"] not in METHODS:
        raise ConfigError(
            f"method '{cfg['method']}' invalid; valid methods: {', '.join(METHODS)}")
    part = cfg["partition"]
    if part not in ("trivial", "discrete", "canonical") and not part.startswith("file:"):
        raise ConfigError(
            f"partition '{part}' invalid (trivial, discrete, canonical, file:PATH)")
    ds = cfg["problem"]["dataset"]
    if ds["kind"] not in ("moons", "blobs", "csv"):
        raise ConfigError(f"dataset.kind '{ds['kind']}' invalid (moons, blobs, csv)")
    if ds["kind"] == "csv" and not ds["path"]:
        raise ConfigError("dataset.kind csv requires dataset.path")
    if ds["kind"] == "csv" and not Path(ds["path"]).exists():
        raise ConfigError(f"dataset file not found: {ds['path']}")
    if part.startswith("file:") and not Path(part[5:]).exists():
        raise ConfigError(f"partition file not found: {part[5:]}")
    order = cfg["check"]["order"]
    if not 1 <= int(order) <= 3:
        raise ConfigError("check.order must be 1, 2 or 3")


def step_config(cfg: dict) -> StepConfig:
    s = cfg["step"]
    try:
        return StepConfig(
            damping=float(s["damping"]),
            regularization_eps=float(s["regularization_eps"]),
            cauchy_on_failure=bool(s["cauchy_on_failure"]),
            max_iterations=int(s["max_iterations"]),
            grad_tolerance=float(s["grad_tolerance"]),
            backtracking=bool(s["backtracking"]),
            reg_mode=str(s["reg_mode"]),
            reg_samples=int(s["reg_samples"]),
            dense_budget=int(s["dense_budget"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"step: {exc}") from exc


def build_problem(cfg: dict):
    """Instantiate the configured problem.

    Returns (loss expression, initial ParamVector, group labels or None,
    dataset or None)."""
    prob = cfg["problem"]
    seed = int(cfg["seed"])
    if prob["kind"] == "quadratic":
        spec = QuadraticSpec(float(prob["eig_lo"]), float(prob["eig_hi"]), seed)
        try:
            q = QuadraticProblem.generate(int(prob["size"]), spec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        start = q.minimizer + np.random.default_rng([seed, 1]).normal(size=q.A.shape[0])
        return q.expr(), ParamVector.flat(start), None, None
    if prob["kind"] == "rosenbrock":
        return make_rosenbrock(), ParamVector.flat([-1.2, 1.0]), None, None

    ds_cfg = prob["dataset"]
    ds_seed = seed if ds_cfg["seed"] is None else int(ds_cfg["seed"])
    if ds_cfg["kind"] == "csv":
        data = load_csv(ds_cfg["path"], CsvSchema(label_column=ds_cfg["label_column"]))
    else:
        noise = ds_cfg["noise"]
        data = synth_dataset(ds_cfg["kind"], int(ds_cfg["n"]), ds_seed,
                             None if noise is None else float(noise))
    try:
        spec = MlpSpec(tuple(prob["widths"]), prob["activation"], prob["loss"],
                       seed, float(prob["init_scale"]))
        f, theta0 = make_mlp(spec, data)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return f, theta0, mlp_labels(spec.widths), data


def build_partition(cfg: dict, theta0: ParamVector, labels) -> Partition:
    spec = cfg["partition"]
    if spec == "trivial":
        return trivial_partition(theta0.size)
    if spec == "discrete":
        return discrete_partition(theta0.size)
    if spec == "canonical":
        return canonical_partition(theta0.shapes, labels)
    try:
        part = Partition.from_json(Path(spec[5:]).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"partition file {spec[5:]}: {exc}") from exc
    if part.total != theta0.size:
        raise ConfigError(
            f"partition covers {part.total} parameters, problem has {theta0.size}")
    return part


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _write(path: Path, text: str) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_run(cfg: dict, out_dir: Path) -> int:
    f, theta0, labels, data = build_problem(cfg)
    part = build_partition(cfg, theta0, labels)
    scfg = step_config(cfg)

    before = engine.counter.snapshot()
    try:
        result = run(f, theta0, cfg["method"], part, scfg)
    except (SolverError, EvaluationError) as exc:
        _write(out_dir / "manifest.json", _json({"config": cfg, "error": str(exc)}))
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    passes = engine.counter.snapshot() - before

    hashes = {"trace_csv": _write(out_dir / "trace.csv", traces_to_csv(result.traces))}
    if cfg["exports"]["trace_json"]:
        # trace.json carries wall times, so it is not hashed in the manifest
        _write(out_dir / "trace.json", traces_to_json(result.traces) + "\n")
    if cfg["exports"]["final_params"]:
        hashes["final_params"] = _write(out_dir / "final_params.json", _json({
            "values": result.theta_final.values.tolist(),
            "shapes": [list(s) for s in result.theta_final.shapes],
        }))
    if data is not None:
        hashes["dataset"] = data.content_hash()

    final_loss = evaluate(f, result.theta_final)
    final_grad = float(np.linalg.norm(gradient(f, result.theta_final)))
    _write(out_dir / "manifest.json", _json({
        "config": cfg,
        "hashes": hashes,
        "pass_totals": {"forward": passes.forward, "backward": passes.backward,
                        "passes": passes.passes},
        "result": {
            "iterations": len(result.traces),
            "termination": result.termination,
            "final_loss": final_loss,
            "final_grad_norm": final_grad,
        },
    }))
    print(f"{cfg['method']}: {len(result.traces)} steps, {result.termination}, "
          f"final loss {final_loss:.6g}, |g| {final_grad:.3g}")
    return EXIT_RUNTIME if result.termination == "aborted-nonfinite" else EXIT_OK


def _invert_with_ladder(hbar: np.ndarray, ladder) -> tuple[np.ndarray | None, dict]:
    meta = {"pseudo_inverse": False, "ladder_eps": None}
    try:
        inv = np.linalg.inv(hbar)
        if np.all(np.isfinite(inv)):
            return inv, meta
    except np.linalg.LinAlgError:
        pass
    for eps in ladder:
        try:
            inv = np.linalg.inv(hbar + eps * np.eye(hbar.shape[0]))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(inv)):
            meta["ladder_eps"] = eps
            return inv, meta
    inv = np.linalg.pinv(hbar)
    meta["pseudo_inverse"] = True
    if np.all(np.isfinite(inv)):
        return inv, meta
    return None, meta


def _matrix_export(key: str, matrix: np.ndarray, gbar, labels,
                   step_stamp: int, extra: dict) -> dict:
    obj = {
        key: [[float(v) for v in row] for row in matrix],
        "labels": list(labels) if labels else None,
        "step": step_stamp,
        "suggested_scale": float(np.max(np.abs(matrix))) if matrix.size else 0.0,
    }
    if gbar is not None:
        obj["gbar"] = [float(v) for v in gbar]
    obj.update(extra)
    return obj


def _block_csv(matrix: np.ndarray, rows, cols, row_labels, col_labels) -> str:
    lines = ["," + ",".join(col_labels)]
    for i, r in enumerate(rows):
        lines.append(row_labels[i] + "," + ",".join(repr(float(matrix[r, c])) for c in cols))
    return "\n".join(lines) + "\n"


def _weight_bias_blocks(part: Partition):
    if part.labels is None:
        return None
    weights = [s for s, lab in enumerate(part.labels) if lab.endswith("/weight")]
    biases = [s for s, lab in enumerate(part.labels) if lab.endswith("/bias")]
    if not weights or not biases or len(weights) + len(biases) != part.size:
        return None
    return weights, biases


def cmd_inspect(cfg: dict, out_dir: Path, at: str) -> int:
    f, theta0, labels, _ = build_problem(cfg)
    part = build_partition(cfg, theta0, labels)
    scfg = step_config(cfg)

    theta, step_stamp = theta0, 0
    if at == "checkpoint":
        result = run(f, theta0, cfg["method"], part, scfg)
        theta, step_stamp = result.theta_final, len(result.traces)

    system = pseudo_hessian(f, theta, part)
    asym = float(np.max(np.abs(system.hbar - system.hbar.T)))
    if system.hbar.size and asym > 1e-12 * max(float(np.max(np.abs(system.hbar))), 1e-300):
        print("warning: exported matrix failed the symmetry check", file=sys.stderr)

    lab = list(part.labels) if part.labels else None
    hashes = {"hbar": _write(out_dir / "hbar.json", _json(
        _matrix_export("hbar", system.hbar, system.gbar, lab, step_stamp,
                       {"point_fingerprint": system.fingerprint})))}

    inv, meta = _invert_with_ladder(system.hbar, step_config(cfg).ladder)
    if inv is None:
        _write(out_dir / "hbar_inv.json", _json({
            "hbar_inv": None, "warning": "inversion failed even with the ladder",
            "step": step_stamp, "labels": lab}))
    else:
        hashes["hbar_inv"] = _write(out_dir / "hbar_inv.json", _json(
            _matrix_export("hbar_inv", inv, None, lab, step_stamp, meta)))

    blocks = _weight_bias_blocks(part)
    if blocks is not None:
        weights, biases = blocks
        wl = [part.labels[s].split("/")[0] for s in weights]
        bl = [part.labels[s].split("/")[0] for s in biases]
        for name, rows, cols, rl, cl in (
            ("ww", weights, weights, wl, wl),
            ("bb", biases, biases, bl, bl),
            ("wb", weights, biases, wl, bl),
        ):
            _write(out_dir / "blocks" / f"{name}.csv",
                   _block_csv(system.hbar, rows, cols, rl, cl))
            if inv is not None:
                _write(out_dir / "blocks" / f"{name}_inv.csv",
                       _block_csv(inv, rows, cols, rl, cl))

    _write(out_dir / "manifest.json", _json({
        "config": cfg, "at": at, "step": step_stamp, "hashes": hashes}))
    print(f"inspect: S={part.size} system at {at} (step {step_stamp}) -> {out_dir}")
    return EXIT_OK


def cmd_check(cfg: dict, out_dir: Path) -> int:
    f, theta0, labels, _ = build_problem(cfg)
    part = build_partition(cfg, theta0, labels)
    order = int(cfg["check"]["order"])
    n_dirs = int(cfg["check"]["directions"])
    tol = dict(CHECK_TOLERANCES)
    for name, value in (cfg["check"]["tolerances"] or {}).items():
        if name not in tol:
            raise ConfigError(f"check.tolerances: unknown check '{name}'")
        tol[name] = float(value)

    rng = np.random.default_rng(int(cfg["seed"]))
    theta = theta0.values
    checks = []
    summary_max_abs = {}

    def record(name, err, tolerance):
        checks.append({"check": name, "max_error": float(err),
                       "tolerance": tolerance, "passed": bool(err <= tolerance)})

    # gradient vs central finite differences
    g = gradient(f, theta0)
    g_fd = np.zeros_like(theta)
    h = 1e-5
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g_fd[i] = (evaluate(f, theta + e) - evaluate(f, theta - e)) / (2 * h)
    record("gradient-fd", np.max(np.abs(g - g_fd) / (1.0 + np.abs(g_fd))), tol["gradient-fd"])

    # pseudo-Hessian vs the finite-difference construction (small P only)
    if theta.size <= 8:
        hs = 1e-4
        h_fd = np.zeros((theta.size, theta.size))
        for i in range(theta.size):
            for j in range(i, theta.size):
                ei = np.zeros_like(theta)
                ej = np.zeros_like(theta)
                ei[i] = hs
                ej[j] = hs
                v = (evaluate(f, theta + ei + ej) - evaluate(f, theta + ei - ej)
                     - evaluate(f, theta - ei + ej) + evaluate(f, theta - ei - ej)) / (4 * hs * hs)
                h_fd[i, j] = h_fd[j, i] = v
        ref = np.zeros((part.size, part.size))
        masks = []
        for s in range(part.size):
            m = np.zeros_like(g)
            idx = np.fromiter(part.groups[s], dtype=np.int64)
            m[idx] = g[idx]
            masks.append(m)
        for s1 in range(part.size):
            for s2 in range(part.size):
                ref[s1, s2] = masks[s1] @ h_fd @ masks[s2]
        system = pseudo_hessian(f, theta0, part)
        record("hessian-oracle",
               np.max(np.abs(system.hbar - ref) / (1.0 + np.abs(ref))),
               tol["hessian-oracle"])

    # sum-collapse and symmetry for each order up to the requested one
    worst_collapse, worst_sym = 0.0, 0.0
    for d in range(1, order + 1):
        max_abs = 0.0
        for _ in range(n_dirs):
            u = rng.normal(size=theta.size)
            st_d = summary_tensor(f, theta0, u, part, d)
            tt = taylor_term(f, theta0, u, d)
            scale = max(abs(tt), 1e-12)
            worst_collapse = max(worst_collapse, abs(st_d.total() - tt) / scale)
            max_abs = max(max_abs, float(np.max(np.abs(st_d.entries))))
            if d >= 2:
                perm = list(range(1, d)) + [0]
                e_scale = max(float(np.max(np.abs(st_d.entries))), 1e-12)
                worst_sym = max(worst_sym, float(np.max(np.abs(
                    np.transpose(st_d.entries, perm) - st_d.entries))) / e_scale)
        summary_max_abs[str(d)] = max_abs
    record("sum-collapse", worst_collapse, tol["sum-collapse"])
    if order >= 2:
        record("symmetry", worst_sym, tol["symmetry"])

    # pseudo-gradient / pseudo-Hessian as order-1/2 summaries at u = g
    if order >= 2:
        system = pseudo_hessian(f, theta0, part)
        st2 = summary_tensor(f, theta0, g, part, 2)
        st1 = summary_tensor(f, theta0, g, part, 1)
        scale2 = max(float(np.max(np.abs(st2.entries))), 1e-12)
        scale1 = max(float(np.max(np.abs(st1.entries))), 1e-12)
        err = max(float(np.max(np.abs(system.hbar - st2.entries))) / scale2,
                  float(np.max(np.abs(pseudo_gradient(f, theta0, part) - st1.entries))) / scale1)
        record("footnote-identity", err, tol["footnote-identity"])

    # cost audit
    before = engine.counter.snapshot()
    pseudo_hessian(f, theta0, part)
    used = (engine.counter.snapshot() - before).passes
    excess = abs(used - (part.size + 1))
    before = engine.counter.snapshot()
    summary_tensor(f, theta0, rng.normal(size=theta.size), part, order)
    used_st = (engine.counter.snapshot() - before).passes
    excess += max(0, used_st - (part.size ** (order - 1) + part.size + 1))
    record("pass-audit", float(excess), tol["pass-audit"])

    failures = [c["check"] for c in checks if not c["passed"]]
    report = {
        "problem": cfg["problem"]["kind"],
        "order": order,
        "checks": checks,
        "summary_max_abs": summary_max_abs,
        "first_failure": failures[0] if failures else None,
    }
    _write(out_dir / "report.json", _json(report))
    for c in checks:
        flag = "PASS" if c["passed"] else "FAIL"
        print(f"{flag} {c['check']}: max_error={c['max_error']:.3e} "
              f"tolerance={c['tolerance']:.3e}")
    if failures:
        print(f"failed checks: {', '.join(failures)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_config(print_defaults: bool) -> int:
    if print_defaults:
        print(yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grouphess",
        description="Partitioned second-order optimization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="YAML config file (or a manifest)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--partition", metavar="SPEC",
                       help="trivial | discrete | canonical | file:PATH")

    p_run = sub.add_parser("run", help="run an optimization experiment")
    common(p_run)

    p_ins = sub.add_parser("inspect", help="export the group curvature matrices")
    common(p_ins)
    p_ins.add_argument("--at", choices=("init", "checkpoint"), default="init",
                       help="evaluate at the initial point or after the configured run")

    p_chk = sub.add_parser("check", help="run the derivative test battery")
    common(p_chk)
    p_chk.add_argument("--order", type=int, choices=(1, 2, 3), help="highest order checked")

    p_cfg = sub.add_parser("config", help="configuration utilities")
    p_cfg.add_argument("--print-defaults", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "config":
        return cmd_config(args.print_defaults)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.method is not None:
            cfg["method"] = args.method
        if args.partition is not None:
            cfg["partition"] = args.partition
        if args.out is not None:
            cfg["out"] = args.out
        if args.command == "check" and args.order is not None:
            cfg["check"]["order"] = args.order
        _validate(cfg)
        out_dir = Path(cfg["out"])

        if args.command == "run":
            return cmd_run(cfg, out_dir)
        if args.command == "inspect":
            return cmd_inspect(cfg, out_dir, args.at)
        return cmd_check(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SolverError, EvaluationError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
