"""Command-line interface: translation runs, verification suites, ablations.

Exit codes: 0 ok, 2 config error, 3 io error, 4 bridge error, 5 numeric
error, 6 verification gate failure. The environment variable SDDM_BRIDGE
overrides a bridge score endpoint.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image, PngImagePlugin

from . import manifold as mf
from . import metrics
from .energy import BadainFeatureEnergy, extractor_from_seed, load_extractor
from .sampler import (
    SamplerBridgeError,
    SamplerConfig,
    generate,
    pni,
)
from .schedule import Schedule, build_respaced_schedule
from .scores import BridgeError, BridgeScore, GaussianDomain, GaussianScore, KdeScore

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BRIDGE = 4
EXIT_NUMERIC = 5
EXIT_GATE = 6

BRIDGE_ENV = "SDDM_BRIDGE"


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "schedule": {"T": 100, "beta_min": 1e-4, "beta_max": 0.02},
    "sampler": {"T0_frac": 0.5, "lambda": 2.0, "lambdas": [25.0], "blocks_N": 16,
                "eps_policy": "P3", "p3_extra_iters": 4, "seed": 0,
                "sigma_min": 1e-6},
    "score": {"kind": "gaussian", "mean": 0.0, "var": 1.0},
    "energies": [{"kind": "badain_feature", "seed": 42, "channels": 8, "k": 3}],
    "moo": {"enabled": True},
    "io": {},
}

_SCHEMA = {
    "schedule": {"T", "beta_min", "beta_max"},
    "sampler": {"T0_frac", "lambda", "lambdas", "blocks_N", "eps_policy",
                "p3_extra_iters", "seed", "sigma_min"},
    "score": {"kind", "mean", "var", "points_path", "endpoint"},
    "energies": {"kind", "seed", "weights_path", "channels", "k"},
    "moo": {"enabled"},
    "io": {"ref_path", "out_path", "report_path"},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def _check_keys(section: str, obj: dict):
    unknown = set(obj) - _SCHEMA[section]
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    merged = default_config()
    for section, value in cfg.items():
        if section == "energies":
            if not isinstance(value, list):
                raise ConfigError("energies must be a list")
            for e in value:
                _check_keys("energies", e)
            merged["energies"] = copy.deepcopy(value)
        else:
            if not isinstance(value, dict):
                raise ConfigError(f"{section} must be an object")
            _check_keys(section, value)
            merged[section].update(copy.deepcopy(value))
    sc = merged["score"]
    if sc.get("kind") not in ("gaussian", "kde", "bridge"):
        raise ConfigError(f"score.kind must be gaussian|kde|bridge, got {sc.get('kind')!r}")
    for e in merged["energies"]:
        if e.get("kind") != "badain_feature":
            raise ConfigError(f"unsupported energy kind {e.get('kind')!r}")
    # referenced files must exist at parse time; missing files are io errors
    if "points_path" in sc and not os.path.exists(sc["points_path"]):
        raise FileNotFoundError(f"score.points_path does not exist: {sc['points_path']}")
    for e in merged["energies"]:
        if "weights_path" in e and not os.path.exists(e["weights_path"]):
            raise FileNotFoundError(f"energy weights_path does not exist: {e['weights_path']}")
    ref = merged["io"].get("ref_path")
    if ref and not os.path.exists(ref):
        raise FileNotFoundError(f"io.ref_path does not exist: {ref}")
    return merged


def load_config(path: str | None) -> dict:
    if path is None:
        return validate_config({})
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(raw)


def apply_overrides(cfg: dict, pairs) -> dict:
    out = copy.deepcopy(cfg)
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                part = int(part)
            elif part not in node:
                raise ConfigError(f"unknown config path {key!r}")
            node = node[part]
        leaf = parts[-1]
        if isinstance(node, list):
            node[int(leaf)] = value
        else:
            node[leaf] = value
    return validate_config(out)


def build_schedule(cfg: dict) -> Schedule:
    sch = cfg["schedule"]
    return build_respaced_schedule(int(sch["T"]), float(sch["beta_min"]),
                                   float(sch["beta_max"]))


def build_sampler_config(cfg: dict, T: int) -> SamplerConfig:
    sa = cfg["sampler"]
    t0 = max(1, int(float(sa["T0_frac"]) * T))
    return SamplerConfig(
        T=T,
        T0=t0,
        lambda_step=float(sa["lambda"]),
        lambdas=tuple(float(l) for l in sa["lambdas"]),
        blocks_n=int(sa["blocks_N"]),
        eps_policy=str(sa["eps_policy"]),
        p3_extra_iters=int(sa["p3_extra_iters"]),
        seed=int(sa["seed"]),
        sigma_min=float(sa["sigma_min"]),
        moo_enabled=bool(cfg["moo"]["enabled"]),
    )


def build_score(cfg: dict, schedule: Schedule, shape):
    sc = cfg["score"]
    if sc["kind"] == "gaussian":
        mean = np.full(shape, float(sc.get("mean", 0.0)))
        var = np.full(shape, float(sc.get("var", 1.0)))
        return GaussianScore(GaussianDomain(mean, var), schedule)
    if sc["kind"] == "kde":
        if "points_path" not in sc:
            raise ConfigError("kde score requires points_path")
        pts = np.load(sc["points_path"])["points"]
        if pts.shape[1:] != tuple(shape):
            raise ConfigError(f"kde points shaped {pts.shape[1:]} do not match image {shape}")
        return KdeScore(pts, schedule)
    endpoint = os.environ.get(BRIDGE_ENV) or sc.get("endpoint")
    if not endpoint:
        raise ConfigError("bridge score requires endpoint (or SDDM_BRIDGE)")
    return BridgeScore(endpoint, schedule=schedule)


def build_energies(cfg: dict, schedule: Schedule, channels: int):
    out = []
    blocks_n = int(cfg["sampler"]["blocks_N"])
    sigma_min = float(cfg["sampler"]["sigma_min"])
    for e in cfg["energies"]:
        if "weights_path" in e:
            fe = load_extractor(e["weights_path"])
        else:
            fe = extractor_from_seed(int(e.get("seed", 42)), in_channels=channels,
                                     out_channels=int(e.get("channels", 8)),
                                     k=int(e.get("k", 3)))
        if fe.in_channels != channels:
            raise ConfigError(f"energy weights expect {fe.in_channels} channels, image has {channels}")
        out.append(BadainFeatureEnergy(fe, blocks_n=blocks_n, schedule=schedule,
                                       sigma_min=sigma_min))
    if len(out) != len(cfg["sampler"]["lambdas"]):
        raise ConfigError("sampler.lambdas must have one entry per energy")
    return out


def read_image(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(f"reference image not found: {path}")
    img = Image.open(path)
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.float64)[None]
    else:
        arr = np.moveaxis(np.asarray(img.convert("RGB"), dtype=np.float64), -1, 0)
    return 2.0 * (arr / 255.0) - 1.0


def write_image(path: str, x: np.ndarray, config_json: str):
    # round-half-even back to 8 bit
    arr = np.rint((np.clip(x, -1.0, 1.0) + 1.0) / 2.0 * 255.0).astype(np.uint8)
    if arr.shape[0] == 1:
        img = Image.fromarray(arr[0], mode="L")
    elif arr.shape[0] == 3:
        img = Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB")
    else:
        raise ValueError(f"cannot write {arr.shape[0]}-channel image")
    info = PngImagePlugin.PngInfo()
    info.add_text("config", config_json)
    img.save(path, pnginfo=info)


def write_trace_csv(path: str, traces, config_json: str):
    n_energy = max((len(tr.energy_values) for tr in traces), default=0)
    cols = ["t", "iterations", "s_r_norm", "score_normal_norm",
            "drift_normal_norm", "moo_sq_norm", "moo_alpha", "pni_flag"]
    cols += [f"energy_{i}" for i in range(n_energy)]
    lines = ["# config " + config_json, ",".join(cols)]
    for tr in traces:
        row = [str(tr.t), str(tr.iterations), repr(tr.s_r_norm),
               repr(tr.score_normal_norm), repr(tr.drift_normal_norm),
               repr(tr.moo_sq_norm), repr(tr.moo_alpha), str(int(tr.pni_flag))]
        vals = list(tr.energy_values) + [float("nan")] * (n_energy - len(tr.energy_values))
        row += [repr(v) for v in vals]
        lines.append(",".join(row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _run_translation(cfg: dict, seed: int):
    schedule = build_schedule(cfg)
    ref_path = cfg["io"].get("ref_path")
    if not ref_path:
        raise ConfigError("translate requires io.ref_path (or --ref)")
    y0 = read_image(ref_path)
    if y0.shape[1] % int(cfg["sampler"]["blocks_N"]) or \
       y0.shape[2] % int(cfg["sampler"]["blocks_N"]):
        raise ConfigError(f"blocks_N={cfg['sampler']['blocks_N']} does not divide "
                          f"image dims {y0.shape[1:]}")
    sampler_cfg = build_sampler_config(cfg, schedule.T)
    score = build_score(cfg, schedule, y0.shape)
    energies = build_energies(cfg, schedule, y0.shape[0])
    t_start = time.perf_counter()
    x0, traces = generate(y0, score, energies, sampler_cfg, schedule,
                          np.random.default_rng(seed))
    runtime = time.perf_counter() - t_start
    if hasattr(score, "close"):
        score.close()
    return y0, x0, traces, runtime


def cmd_translate(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    if args.ref:
        cfg["io"]["ref_path"] = args.ref
    if args.out:
        cfg["io"]["out_path"] = args.out
    if args.report:
        cfg["io"]["report_path"] = args.report
    if args.seed is not None:
        cfg["sampler"]["seed"] = args.seed
    cfg = validate_config(cfg)
    seed = int(cfg["sampler"]["seed"])
    out_path = cfg["io"].get("out_path")
    if not out_path:
        raise ConfigError("translate requires io.out_path (or --out)")
    y0, x0, traces, runtime = _run_translation(cfg, seed)
    config_json = json.dumps(cfg, sort_keys=True)
    write_image(out_path, x0, config_json)
    stem = out_path[:-4] if out_path.endswith(".png") else out_path
    trace_path = stem + ".trace.csv"
    write_trace_csv(trace_path, traces, config_json)
    summary = {
        "config": cfg,
        "seed": seed,
        "ssim_vs_reference": metrics.ssim(x0, y0),
        "pni": pni(traces),
        "guided_steps": len(traces),
        "out_path": out_path,
        "trace_path": trace_path,
        "runtime_sec": runtime,
    }
    report_path = cfg["io"].get("report_path") or stem + ".summary.json"
    with open(report_path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"translate: wrote {out_path}, {trace_path}, {report_path} "
          f"(ssim {summary['ssim_vs_reference']:.4f}, pni {summary['pni']:.4f})")
    return EXIT_OK


SUITES = ("concentration", "separability", "lowpass", "decomposition")


def _run_suite(name: str, schedule: Schedule, seed: int):
    if name == "concentration":
        return metrics.concentration_suite(schedule, seed=seed)
    if name == "separability":
        block = np.random.default_rng(seed).uniform(-1, 1, size=1024) + 0.5
        return metrics.separability_suite(schedule, block, seed=seed)
    if name == "lowpass":
        rng = np.random.default_rng(seed)
        y0 = rng.uniform(-1, 1, size=(1, 16, 16))
        p = mf.BlockPartition(n=2, c=1, h=16, w=16)
        return metrics.lowpass_expectation_suite(y0, p, schedule, seed=seed)
    if name == "decomposition":
        rng = np.random.default_rng(seed)
        p = mf.BlockPartition(n=2, c=1, h=16, w=16)
        y0 = rng.uniform(-1, 1, size=(1, 16, 16))
        stats = mf.block_stats(y0, p)
        m = mf.manifold_at(stats, schedule, schedule.T // 2, p)
        dom = GaussianDomain(rng.uniform(-1, 1, (1, 16, 16)), np.ones((1, 16, 16)))
        return metrics.decomposition_suite(GaussianScore(dom, schedule), m, seed=seed)
    raise ConfigError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")


def cmd_verify(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    schedule = build_schedule(cfg)
    seed = args.seed if args.seed is not None else int(cfg["sampler"]["seed"])
    names = list(SUITES) if args.suite == "all" else [args.suite]
    if any(n not in SUITES for n in names):
        raise ConfigError(f"unknown suite {args.suite!r}; choose from {SUITES + ('all',)}")
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        reports = list(pool.map(lambda n: _run_suite(n, schedule, seed), names))
    merged = {"config": cfg, "seed": seed,
              "reports": [r.to_dict() for r in reports]}
    if args.report:
        with open(args.report, "w") as f:
            json.dump(merged, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(args.report + ".txt", "w") as f:
            f.write("\n\n".join(r.to_text() for r in reports) + "\n")
    ok = all(r.passed for r in reports)
    for r in reports:
        print(f"suite {r.suite}: {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_GATE


def cmd_ablate(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    if args.ref:
        cfg["io"]["ref_path"] = args.ref
    if args.seed is not None:
        cfg["sampler"]["seed"] = args.seed
    cfg = validate_config(cfg)
    if "=" not in (args.sweep or ""):
        raise ConfigError("--sweep expects KEY=V1,V2,...")
    key, raw_vals = args.sweep.split("=", 1)
    values = []
    for tok in raw_vals.split(","):
        try:
            values.append(json.loads(tok))
        except json.JSONDecodeError:
            values.append(tok)

    def run_one(value):
        sub = apply_overrides(cfg, [f"{key}={json.dumps(value)}"])
        seed = int(sub["sampler"]["seed"])
        y0, x0, traces, runtime = _run_translation(sub, seed)
        return {"setting": f"{key}={value}", "ssim": metrics.ssim(x0, y0),
                "pni": pni(traces), "runtime_sec": runtime}

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(run_one, values))
    lines = ["# config " + json.dumps(cfg, sort_keys=True),
             "setting,ssim,pni,runtime_sec"]
    for row in rows:
        lines.append(f"{row['setting']},{row['ssim']!r},{row['pni']!r},"
                     f"{row['runtime_sec']!r}")
    out = "\n".join(lines) + "\n"
    if args.report:
        with open(args.report, "w") as f:
            f.write(out)
    print(out, end="")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momentdiff")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=os.cpu_count())

    t = sub.add_parser("translate", help="guided translation of a reference image")
    common(t)
    t.add_argument("--ref")
    t.add_argument("--out")
    t.add_argument("--report")
    t.set_defaults(func=cmd_translate)

    v = sub.add_parser("verify", help="run verification suites")
    common(v)
    v.add_argument("--suite", default="all")
    v.add_argument("--report")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("ablate", help="sweep one config axis")
    common(a)
    a.add_argument("--ref")
    a.add_argument("--sweep", metavar="KEY=V1,V2,...")
    a.add_argument("--report")
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BridgeError, SamplerBridgeError) as exc:
        print(f"bridge error: {exc}", file=sys.stderr)
        return EXIT_BRIDGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
