"""Command-line entry point: ``hoidiff <command> ...``."""
import argparse
import glob
import json
import logging
import os
import sys

import torch

from . import config as C
from .body import BodyProxy
from .corrector import CorrectorConfig, write_reports
from .denoiser import DenoiserConfig, HoiDenoiser
from .diffusion import DiffusionLossWeights, make_schedule
from .errors import HoiError
from .evaluation import autoregressive_rollout
from .features import FeatureCodec
from .io import export_csv, load_checkpoint, load_corpus, load_sequence, save_checkpoint, save_sequence
from .metrics import evaluate, mean_report
from .pipeline import Context, HoiGenerator, fit_codec, make_windows, train_denoiser, train_predictor
from .predictor import PredictorConfig, PredictorLossWeights, StgnnPredictor
from .synthetic import KINDS, Scenario, generate_synthetic

log = logging.getLogger("hoidiff")


def load_dataset(path):
    """Sequences from a directory of JSON files, a single JSON file or an .npz corpus."""
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.json")))
        if not files:
            raise HoiError(f"no .json sequences in {path}")
        return [load_sequence(f) for f in files]
    if path.endswith(".npz"):
        return load_corpus(path)
    return [load_sequence(path)]


def _body_from(header):
    body = header.get("extra", {}).get("body")
    return BodyProxy.from_dict(body) if body else BodyProxy.default()


def load_denoiser(path):
    header, state = load_checkpoint(path, kind="denoiser")
    cfg = DenoiserConfig(**header["config"]["model"])
    model = HoiDenoiser(cfg)
    model.load_state_dict(state)
    model.eval()
    extra = header["extra"]
    codec = FeatureCodec.from_dict(extra["codec"])
    d = header["config"]["diffusion"]
    schedule = make_schedule(d["T"], d["schedule"])
    return model, codec, schedule, extra


def load_predictor(path):
    header, state = load_checkpoint(path, kind="predictor")
    model = StgnnPredictor(PredictorConfig(**header["config"]))
    model.load_state_dict(state)
    model.eval()
    return model, _body_from(header)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    os.makedirs(args.out, exist_ok=True)
    kinds = KINDS if args.scenario == "mixed" else (args.scenario,)
    for i in range(args.count):
        sc = Scenario(kind=kinds[i % len(kinds)], duration=args.frames, seed=args.seed * 100003 + i,
                      past=args.past)
        save_sequence(generate_synthetic(sc), os.path.join(args.out, f"clip_{i:05d}.json"))
    print(f"wrote {args.count} clips to {args.out}")


def cmd_train_diffusion(args):
    cfg = C.load_config(args.config, args.set)
    seqs = load_dataset(args.data)
    d = cfg["data"]
    windows = make_windows(seqs, d["past"], d["future"], d["stride"])
    if not windows:
        raise HoiError("no training windows; clips are shorter than past + future")
    codec = fit_codec(windows)
    den = dict(cfg["denoiser"])
    preset = den.pop("preset")
    mcfg = DenoiserConfig.preset(preset, num_joints=codec.num_joints, **den) if preset != "desk" else \
        DenoiserConfig(num_joints=codec.num_joints, **den)
    L = cfg["loss"]
    weights = DiffusionLossWeights(L["lambda_h"], L["lambda_o"], L["lambda_vh"], L["lambda_vo"])
    dc = cfg["diffusion"]
    model, schedule, hist = train_denoiser(windows, codec, mcfg, T=dc["T"], steps=dc["steps"],
                                           batch_size=dc["batch_size"], lr=dc["lr"], seed=cfg["seed"],
                                           weights=weights)
    save_checkpoint(args.out, "denoiser", {"model": mcfg.to_dict(), "diffusion": {"T": dc["T"], "schedule": dc["schedule"]}},
                    model.state_dict(), {"codec": codec.to_dict(), "past": d["past"], "future": d["future"],
                                         "final_loss": hist[-1]})
    print(f"trained denoiser on {len(windows)} windows, final loss {hist[-1]:.4f} -> {args.out}")


def cmd_train_predictor(args):
    cfg = C.load_config(args.config, args.set)
    body = BodyProxy.default()
    seqs = load_dataset(args.data)
    d, p = cfg["data"], cfg["predictor"]
    windows = make_windows(seqs, d["past"], d["future"], d["stride"])
    if not windows:
        raise HoiError("no training windows; clips are shorter than past + future")
    pcfg = PredictorConfig(past=d["past"], future=d["future"], num_nodes=body.num_contact_points(p["contact_mode"]) + 1,
                           dct_bases=p["dct_bases"], blocks=p["blocks"], width=p["width"],
                           contact_mode=p["contact_mode"], orientation_mode=cfg["frames"]["orientation_mode"],
                           relative=p["relative"], eps_contact=cfg["corrector"]["eps_contact"])
    weights = PredictorLossWeights(p["lambda_o"], p["lambda_vo"], p["lambda_c"], p["lambda_p"])
    model, hist = train_predictor(windows, body, pcfg, steps=p["steps"], batch_size=p["batch_size"], lr=p["lr"],
                                  seed=cfg["seed"], weights=weights, use_contact=p["contact_mode"] == "marker")
    save_checkpoint(args.out, "predictor", pcfg.to_dict(), model.state_dict(), {"body": body.to_dict()})
    print(f"trained predictor on {len(windows)} windows, final loss {hist[-1]:.4f} -> {args.out}")


def _generator(args):
    model, codec, schedule, extra = load_denoiser(args.denoiser)
    predictor = body = None
    ccfg = CorrectorConfig(args.eps_penetration, args.eps_contact, args.late_fraction, args.stride, args.mode,
                           guard=not args.no_guard)
    if args.correct:
        if not args.predictor:
            raise HoiError("--correct needs --predictor")
        predictor, body = load_predictor(args.predictor)
    return HoiGenerator(model, codec, schedule, extra["future"], predictor, body, ccfg), extra


def cmd_sample(args):
    gen, extra = _generator(args)
    seq = load_sequence(args.past)
    if seq.past != extra["past"]:
        seq = seq.with_split(extra["past"])
    ctx = Context.from_sequence(seq)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.n):
        out, reports = gen.sample([ctx], seed=args.seed + i, correct=args.correct)
        save_sequence(out[0], os.path.join(args.out, f"sample_{i:03d}.json"))
        if args.correct:
            write_reports(os.path.join(args.out, f"sample_{i:03d}.corrections.jsonl"), reports)
    print(f"wrote {args.n} samples to {args.out}")


def cmd_rollout(args):
    gen, extra = _generator(args)
    seq = load_sequence(args.past)
    if seq.past != extra["past"]:
        seq = seq.with_split(extra["past"])
    counter = iter(range(10 ** 9))

    def sampler(ctx_seq):
        out, _ = gen.sample([Context.from_sequence(ctx_seq)], seed=args.seed + next(counter), correct=args.correct)
        return out[0]

    result = autoregressive_rollout(sampler, seq, args.frames)
    save_sequence(result, args.out)
    print(f"wrote {result.future}-frame rollout to {args.out}")


def cmd_eval(args):
    body = BodyProxy.default()
    preds = sorted(glob.glob(os.path.join(args.pred, "*.json")))
    gts = sorted(glob.glob(os.path.join(args.gt, "*.json")))
    if not preds or len(preds) != len(gts):
        raise HoiError(f"need matching non-empty prediction/ground-truth sets, got {len(preds)} and {len(gts)}")
    reports = [evaluate(load_sequence(p), load_sequence(g), body, args.mode) for p, g in zip(preds, gts)]
    out = mean_report(reports).to_dict()
    out["count"] = len(reports)
    out["config"] = {"mode": args.mode, "pred": args.pred, "gt": args.gt}
    with open(args.report, "w") as fh:
        json.dump(out, fh, indent=2)
    print(json.dumps(out, indent=2))


def cmd_export(args):
    seq = load_sequence(args.seq)
    if args.format == "csv":
        export_csv(seq, args.out)
    else:
        save_sequence(seq, args.out)
    print(f"exported {args.seq} -> {args.out}")


def _sampling_flags(p):
    p.add_argument("--denoiser", required=True)
    p.add_argument("--predictor")
    p.add_argument("--correct", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-penetration", type=float, default=0.01)
    p.add_argument("--eps-contact", type=float, default=0.05)
    p.add_argument("--late-fraction", type=float, default=0.1)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--mode", choices=("mesh", "skeletal"), default="mesh")
    p.add_argument("--no-guard", action="store_true",
                   help="accept forecasts even when they penetrate more than the denoised sample")


def build_parser():
    ap = argparse.ArgumentParser(prog="hoidiff", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--scenario", choices=KINDS + ("mixed",), default="mixed")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=35)
    p.add_argument("--past", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, fn in (("train-diffusion", cmd_train_diffusion), ("train-predictor", cmd_train_predictor)):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--data", required=True, help="directory of .json clips or an .npz corpus")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("sample", help="draw forecasts for one observed clip")
    p.add_argument("--past", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out", required=True)
    _sampling_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("rollout", help="autoregressive long-horizon forecast")
    p.add_argument("--past", required=True)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--out", required=True)
    _sampling_flags(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="metrics of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--mode", choices=("mesh", "skeletal"), default="mesh")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="re-export a sequence as JSON or CSV")
    p.add_argument("--seq", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(max(1, min(8, os.cpu_count() or 1)))
    try:
        args.func(args)
    except (HoiError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
