"""Command-line client for the denoising service.

Every subcommand is a thin wrapper that builds one request, sends it to the
service, and renders the response. By default the FastAPI app runs in-process;
pass ``--server http://host:port`` to talk to a remote instance (paths then
refer to the server's filesystem). All randomness requires an explicit
``--seed``; there are no wall-clock defaults.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _post(args, path: str, payload: dict) -> dict:
    with _client(args.server) as client:
        response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        print(f"error: {detail}", file=sys.stderr)
        raise SystemExit(1)
    return response.json()


def _emit(args, data: dict, render) -> None:
    if args.json:
        print(json.dumps(data, indent=2))
    else:
        render(data)


def _cmd_serve(args) -> None:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)


def _cmd_synth(args) -> None:
    payload = {
        "clean": args.clean,
        "recipe_path": args.noise,
        "seed": args.seed,
        "out": args.out,
        "clean_out": args.clean_out,
    }
    data = _post(args, "/synth", payload)

    def render(d):
        print(f"wrote {d['out']} ({d['height']}x{d['width']}x{d['bands']}, {d['variant']}, seed {d['seed']})")
        print(f"noisy psnr vs clean: {d['psnr_vs_clean_db']:.2f} dB")

    _emit(args, data, render)


def _cmd_train(args) -> None:
    payload = {
        "config_path": args.config,
        "data_dir": args.data,
        "epochs": args.epochs,
        "steps": args.steps,
        "seed": args.seed,
        "ckpt_out": args.ckpt,
        "noise_recipe_path": args.noise,
        "resume_from": args.resume,
        "batch_size": args.batch,
        "val_count": args.val_count,
        "lr": args.lr,
    }
    data = _post(args, "/train", payload)

    def render(d):
        print(f"trained {d['steps']} steps -> {d['ckpt']}")
        print(f"final lr {d['final_lr']:.2e}, final batch loss {d['final_train_loss']:.6f}")
        print(f"validation psnr: noisy {d['val_psnr_noisy_db']:.2f} dB -> denoised {d['val_psnr_denoised_db']:.2f} dB")

    _emit(args, data, render)


def _cmd_denoise(args) -> None:
    data = _post(args, "/denoise", {"ckpt": args.ckpt, "input": args.input, "output": args.out})
    _emit(args, data, lambda d: print(f"wrote {d['output']} ({d['height']}x{d['width']}x{d['bands']})"))


def _cmd_eval(args) -> None:
    data = _post(args, "/eval", {"ref": args.ref, "test": args.test})

    def render(d):
        print(d["table"], end="")
        print()
        print(f"psnr_db = {d['psnr_db']:.6f}")
        print(f"ssim = {d['ssim']:.8f}")
        print(f"sam_degrees = {d['sam_degrees']:.6f}")

    _emit(args, data, render)


def _cmd_gradcheck(args) -> None:
    data = _post(args, "/gradcheck", {"config_path": args.config, "seed": args.seed, "tolerance": args.tolerance})

    def render(d):
        width = max(len(k) for k in d["groups"])
        for name, err in sorted(d["groups"].items(), key=lambda kv: -kv[1]):
            print(f"{name:<{width}}  {err:.3e}")
        print(f"max relative error {d['max_rel_error']:.3e} (tolerance {d['tolerance']:.1e})"
              f" -> {'PASS' if d['passed'] else 'FAIL'}")

    _emit(args, data, render)
    if not data["passed"]:
        raise SystemExit(1)


def _cmd_stats(args) -> None:
    try:
        h, w = (int(part) for part in args.hw.lower().split("x"))
    except ValueError:
        print(f"error: --hw expects HxW, got '{args.hw}'", file=sys.stderr)
        raise SystemExit(1)
    data = _post(args, "/stats", {"config_path": args.config, "height": h, "width": w})

    def render(d):
        print("parameters:")
        for entry in d["param_components"]:
            tag = " (assumed)" if entry["assumed"] else ""
            print(f"  {entry['component']:<28} {entry['value']:>12,}{tag}")
        print(f"  {'total':<28} {d['total_params']:>12,}")
        print(f"  {'assumed subtotal':<28} {d['assumed_params']:>12,}")
        print(f"multiply-accumulates at {h}x{w} (1 MAC = 2 FLOPs):")
        for entry in d["mac_components"]:
            tag = " (assumed)" if entry["assumed"] else ""
            print(f"  {entry['component']:<28} {entry['value']:>16,}{tag}")
        print(f"  {'total':<28} {d['total_macs']:>16,}")
        print(f"  {'gflops':<28} {d['gflops']:>16.1f}")

    _emit(args, data, render)


def _cmd_dump_zl(args) -> None:
    data = _post(args, "/dump-zl", {"ckpt": args.ckpt, "input": args.input, "out": args.out})
    _emit(args, data, lambda d: print(f"wrote {d['rows']} low-rank vectors to {d['out']}"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sert", description=__doc__)
    parser.add_argument("--server", default=None, help="service URL; default runs the app in-process")
    parser.add_argument("--json", action="store_true", help="print raw JSON responses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("synth", help="degrade a clean cube with a noise recipe")
    p.add_argument("--clean", required=True, help="path to .hsr, or gen:texture:HxWxB")
    p.add_argument("--noise", required=True, help="noise recipe file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clean-out", default=None, help="also write the clean cube (generators)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a directory of clean .hsr patches")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="total step budget (overrides --epochs)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--noise", default=None, help="training-noise recipe; default iid Gaussian sigma 50")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--val-count", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("denoise", help="restore a noisy cube with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("eval", help="compare a restored cube against its reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("stats", help="parameter and MAC accounting for a configuration")
    p.add_argument("--config", default=None)
    p.add_argument("--hw", default="512x512")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("dump-zl", help="dump per-patch low-rank vectors to a TSV table")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump_zl)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
