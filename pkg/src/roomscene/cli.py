"""Command line driver.

Exit codes: 0 success, 2 invalid input (bundle or arguments), 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import BundleError, RoomSceneError, StageError

STAGE_OF = {"calibrate": "calibrate", "layout": "layout", "support": "support", "heights": "heights",
            "retrieve": "retrieve", "place": None, "pipeline": None}


def _common(p):
    p.add_argument("--bundle", required=True, help="scene bundle directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--top-models", type=int, default=5)
    p.add_argument("--orientations", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--room-height", type=float, default=3.0)


def build_parser():
    ap = argparse.ArgumentParser(prog="roomscene", description="single-view indoor scene geometry")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGE_OF:
        _common(sub.add_parser(name, help=f"run the pipeline up to '{name}'"))
    s = sub.add_parser("synth", help="write a synthetic bundle and its truth.json")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-objects", type=int, default=16)
    s.add_argument("--line-sigma", type=float, default=0.0)
    s.add_argument("--clutter", type=float, default=0.0)
    s.add_argument("--mask-morph", type=int, default=0)
    s.add_argument("--no-answers", action="store_true", help="leave out injected support answers")
    e = sub.add_parser("eval", help="score a result directory against truth.json")
    e.add_argument("--bundle", required=True, help="bundle directory holding truth.json")
    e.add_argument("--out", required=True, help="directory holding result.json; metrics.json is written there")
    return ap


def _config(args, stop):
    from .pipeline import Config
    return Config(iters=args.iters, top_models=args.top_models, orientations=args.orientations,
                  seed=args.seed, room_height=args.room_height, stop_after=stop)


def _run_stage(args):
    from .pipeline import run_pipeline
    from .scene_io import export_obj, load_bundle, save_result
    bundle = load_bundle(args.bundle)
    res = run_pipeline(bundle, _config(args, STAGE_OF[args.command]))
    out = Path(args.out)
    save_result(res, out)
    if res.objects and STAGE_OF[args.command] is None:
        export_obj(res, out / "scene.obj")
    print(json.dumps({k: round(v, 4) for k, v in res.timings.items()}))


def _synth(args):
    from .scene_io import _atomic_write, save_bundle
    from .synth import Noise, make_scene
    noise = Noise(args.line_sigma, args.clutter, args.mask_morph)
    truth, bundle = make_scene(args.seed, args.n_objects, noise, inject_answers=not args.no_answers)
    save_bundle(bundle, args.out)
    _atomic_write(Path(args.out) / "truth.json", truth.to_json().encode("utf-8"))


def _eval(args):
    from .scene_io import _atomic_write, _json_bytes, _plain, load_result
    from .synth import GroundTruthScene, evaluate
    f = Path(args.bundle) / "truth.json"
    if not f.is_file():
        from .errors import MissingFile
        raise MissingFile("file not found", str(f))
    truth = GroundTruthScene.from_dict(json.loads(f.read_text()))
    res = load_result(Path(args.out) / "result.json")
    metrics = _plain(evaluate(res, truth))
    _atomic_write(Path(args.out) / "metrics.json", _json_bytes(metrics))
    print(json.dumps({k: v for k, v in metrics.items() if not isinstance(v, dict)}))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            _synth(args)
        elif args.command == "eval":
            _eval(args)
        else:
            _run_stage(args)
    except BundleError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"stage '{e.stage}' failed: {e}", file=sys.stderr)
        return 3
    except RoomSceneError as e:
        print(f"failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
