"""Command-line entry point.

Exit codes: 0 success, 1 input or parse error, 2 domain error (no skin,
empty region, short or unpaired dataset), 3 calibration outlier.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import calibration, dataset, models, skin, synth
from .color import WhitePoint, lab_to_xyz

EXIT_OK, EXIT_INPUT, EXIT_DOMAIN, EXIT_OUTLIER = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _triple(text, name):
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError:
        raise CliError(f"{name}: expected comma-separated numbers, got {text!r}", EXIT_INPUT)
    if len(vals) != 3 or not all(np.isfinite(vals)):
        raise CliError(f"{name}: expected three finite values, got {text!r}", EXIT_INPUT)
    return np.array(vals)


def _white(args):
    try:
        return WhitePoint.parse(args.white_point)
    except ValueError as exc:
        raise CliError(f"--white-point: {exc}", EXIT_INPUT)


def _config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _with_suffix(path, suffix):
    root, _ = os.path.splitext(path)
    return root + suffix


def _read_image(path):
    try:
        return dataset.read_image(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read image {path}: {exc}", EXIT_INPUT)


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {what} {path}: {exc}", EXIT_INPUT)


def _load_profile(path):
    try:
        return calibration.CalibrationProfile.from_dict(_load_json(path, "profile"))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid profile {path}: {exc}", EXIT_INPUT)


# -- subcommands ------------------------------------------------------------

def cmd_mask(args):
    img = _read_image(args.image)
    mask = skin.skin_mask(img)
    if not mask.any():
        raise CliError(f"no skin detected in {args.image}", EXIT_DOMAIN)
    dataset.write_mask_png(args.out, mask)
    sidecar = {
        "image": args.image,
        "width": int(mask.shape[1]),
        "height": int(mask.shape[0]),
        "pixel_count": int(mask.sum()),
        "mean_rgb": skin.mask_mean_rgb(img, mask).tolist(),
        "config": _config(args),
    }
    dataset.write_json(_with_suffix(args.out, ".json"), sidecar)
    print(f"{sidecar['pixel_count']} skin pixels, mean RGB {np.round(sidecar['mean_rgb'], 2).tolist()}")
    return EXIT_OK


def _skin_centroid(args):
    if args.skin_centroid:
        return _triple(args.skin_centroid, "--skin-centroid")
    if not args.skin_centroid_from:
        return None
    src = args.skin_centroid_from
    if src.endswith(".json"):
        try:
            return _triple(",".join(map(str, _load_json(src, "mask sidecar")["mean_rgb"])), src)
        except (KeyError, TypeError) as exc:
            raise CliError(f"{src}: not a mask sidecar ({exc})", EXIT_INPUT)
    img = _read_image(src)
    try:
        return skin.mask_mean_rgb(img, skin.skin_mask(img))
    except skin.NoSkinError:
        raise CliError(f"no skin detected in {src}", EXIT_DOMAIN)


def cmd_calibrate(args):
    white = _white(args)
    img = _read_image(args.image)
    try:
        ann = dataset.load_annotation(args.annotation)
        refs = dataset.load_references(args.references)
        obs = dataset.chart_observations(img, ann, refs)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"bad chart inputs: {exc}", EXIT_INPUT)

    if args.profile_in:
        profile = _load_profile(args.profile_in)
        report_path = args.out
    else:
        centroid = _skin_centroid(args)
        gray_ids = [int(g) for g in ann["gray_ids"]]
        try:
            profile = calibration.build_profile(obs, gray_ids, centroid, white=white)
        except KeyError as exc:
            raise CliError(f"bad chart inputs: {exc}", EXIT_INPUT)
        except calibration.FitError as exc:
            raise CliError(f"calibration failed: {exc}", EXIT_DOMAIN)
        profile.metadata["source_image"] = args.image
        profile.metadata["config"] = _config(args)
        report_path = args.report or _with_suffix(args.out, ".report.json")

    ev = calibration.evaluate_chart(profile, obs, white)
    if not args.profile_in:
        dataset.write_json(args.out, profile.to_dict())
    report = dict(ev.to_dict(), image=args.image, config=_config(args))
    dataset.write_json(report_path, report)
    hist = ["patch_id,delta_e"] + [f"{pid},{float(e)!r}" for pid, e in zip(ev.patch_ids, ev.delta_e)]
    dataset.atomic_write_text(_with_suffix(report_path, ".delta_e.csv"), "\n".join(hist) + "\n")
    n_small = int(np.sum(ev.delta_e < 3))
    print(f"mean dE76 {ev.mean_delta_e:.4f}; {n_small}/{len(ev.delta_e)} patches below 3")
    if ev.outlier:
        print(f"calibration outlier: mean dE76 {ev.mean_delta_e:.3f} > {calibration.OUTLIER_DELTA_E}",
              file=sys.stderr)
        return EXIT_OUTLIER
    return EXIT_OK


def _region_jobs(args, img):
    """(region, fields) pairs for the requested extraction."""
    source = args.source_id or os.path.splitext(os.path.basename(args.image))[0]
    base = {"source_id": source, "role": args.role, "subject_id": args.subject or "",
            "shade": args.shade or ""}
    chosen = [bool(args.mask), bool(args.rect), bool(args.regions)]
    if sum(chosen) != 1:
        raise CliError("give exactly one of --mask, --rect, --regions", EXIT_INPUT)
    if args.mask:
        return [(skin.skin_mask(img), base)]
    if args.rect:
        try:
            rect = tuple(int(v) for v in args.rect.split(","))
        except ValueError:
            rect = ()
        if len(rect) != 4 or rect[2] <= 0 or rect[3] <= 0:
            raise CliError(f"--rect: expected x,y,w,h with positive size, got {args.rect!r}", EXIT_INPUT)
        return [(rect, base)]
    try:
        ann = dataset.load_annotation(args.regions)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"bad region annotation: {exc}", EXIT_INPUT)
    jobs = []
    for entry in ann["patches"]:
        fields = dict(base)
        if "shade" in entry:
            fields["shade"] = str(entry["shade"])
        if "subject_id" in entry:
            fields["subject_id"] = str(entry["subject_id"])
        r = entry["rect"]
        rows, cols = dataset.center_slices((r["x"], r["y"], r["w"], r["h"]))
        jobs.append(((cols.start, rows.start, cols.stop - cols.start, rows.stop - rows.start), fields))
    return jobs


def cmd_extract(args):
    white = _white(args)
    profile = _load_profile(args.profile)
    img = _read_image(args.image)
    outlier = bool(profile.metadata.get("fit_mean_delta_e", 0.0) > calibration.OUTLIER_DELTA_E)
    xyz = calibration.apply_profile(img, profile)
    regions = []
    for region, fields in _region_jobs(args, img):
        try:
            regions.append(dataset.extract_region_color(xyz, region, white, outlier=outlier, **fields))
        except dataset.EmptyRegionError as exc:
            raise CliError(f"{args.image}: {exc}", EXIT_DOMAIN)
        except ValueError as exc:
            raise CliError(f"{args.image}: {exc}", EXIT_INPUT)
    try:
        dataset.upsert_regions(args.out, regions)
    except dataset.DatasetError as exc:
        raise CliError(str(exc), EXIT_INPUT)
    for r in regions:
        print(f"{r.source_id} {r.role} {r.subject_id or '-'} {r.shade or '-'} "
              f"Lab {np.round(r.lab, 3).tolist()} ({r.pixel_count} px)")
    return EXIT_OK


def _load_rows(path, minimum):
    try:
        rows = dataset.load_samples(path)
    except dataset.UnpairedSampleError as exc:
        raise CliError(str(exc), EXIT_DOMAIN)
    except (OSError, dataset.DatasetError) as exc:
        raise CliError(str(exc), EXIT_INPUT)
    if len(rows) < minimum:
        raise CliError(f"dataset has {len(rows)} rows; at least {minimum} required", EXIT_DOMAIN)
    return rows


def _model(args):
    if not (args.svr_c > 0 and args.svr_eps >= 0):
        raise CliError("--svr-c must be > 0 and --svr-eps >= 0", EXIT_INPUT)
    return models.make_model(args.model, C=args.svr_c, epsilon=args.svr_eps)


def cmd_train(args):
    rows = _load_rows(args.dataset, 2)
    x, y = dataset.rows_to_arrays(rows)
    model = _model(args).fit(x, y)
    dataset.write_json(args.out, dict(models.model_to_dict(model), config=_config(args), n_train=len(rows)))
    print(f"trained {args.model} model on {len(rows)} rows")
    return EXIT_OK


def cmd_loocv(args):
    rows = _load_rows(args.dataset, 3)
    report = models.loocv(rows, _model(args))
    dataset.write_json(args.out, dict(report.to_dict(), model=args.model, config=_config(args)))
    lines = ["subject_id,shade,res_L,res_a,res_b,delta_e"]
    for (subject, shade), res in zip(report.keys, report.residuals):
        lines.append(",".join([subject, shade] + [repr(float(v)) for v in res]
                              + [repr(float(np.linalg.norm(res)))]))
    dataset.atomic_write_text(_with_suffix(args.out, ".residuals.csv"), "\n".join(lines) + "\n")
    print(report.table(f"{args.model} (N={len(rows)})"))
    return EXIT_OK


def cmd_predict(args):
    d = _load_json(args.model_file, "model")
    try:
        model = models.model_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid model {args.model_file}: {exc}", EXIT_INPUT)
    try:
        x = np.array([float(v) for v in args.input.split(",")])
    except ValueError:
        x = np.array([])
    if x.shape != (6,) or not np.all(np.isfinite(x)):
        raise CliError("--input needs six comma-separated numbers (skin Lab, foundation Lab)", EXIT_INPUT)
    lab = np.asarray(model.predict(x.reshape(1, 6))).reshape(-1)
    print(" ".join(f"{v:.6f}" for v in lab))
    return EXIT_OK


def _camera(args):
    try:
        cam = synth.ForwardCameraModel.random(args.seed, noise_sigma=args.noise)
        if args.gamma:
            gammas = [float(g) for g in args.gamma.split(",")]
            if len(gammas) == 1:
                gammas *= 3
            if len(gammas) != 3:
                raise ValueError("--gamma takes one or three values")
            cam = synth.ForwardCameraModel(
                cam.m, tuple(calibration.ChannelCurve(c.gain, g, c.offset) for c, g in zip(cam.encode, gammas)),
                cam.noise_sigma, cam.seed)
    except ValueError as exc:
        raise CliError(f"invalid camera parameters: {exc}", EXIT_INPUT)
    return cam


def _write_chart_bundle(outdir, chart, cam, config):
    dataset.write_png(os.path.join(outdir, "chart.png"), chart.image)
    dataset.write_json(os.path.join(outdir, "chart_annotation.json"), chart.annotation)
    dataset.atomic_write_text(os.path.join(outdir, "references.csv"), dataset.references_csv(chart.references))
    dataset.write_json(os.path.join(outdir, "camera.json"),
                       dict(cam.to_dict(), out_of_gamut=chart.out_of_gamut, config=config,
                            note="synthetic reference values, not measured data"))


def _flat_image(device, size=32):
    img = np.zeros((size, size, 3), dtype=np.uint8)
    synth.dither_fill(img, (0, 0, size, size), device, anchor=(0, 0))
    return img


def _write_pipeline(outdir, args, cam, config, white):
    rng = synth.rng_for(args.seed + 1)
    chart = synth.synth_chart(cam=cam, rng=synth.rng_for(args.seed))
    _write_chart_bundle(outdir, chart, cam, config)
    rows, mixing, bare, swatches = synth.synth_prediction_dataset(
        args.subjects, args.rows, noise_sigma=args.mix_noise, seed=args.seed, constant=args.constant)
    dataset.save_dataset(os.path.join(outdir, "truth.csv"), rows)
    dataset.write_json(os.path.join(outdir, "generator.json"), dict(mixing.to_dict(), rng=synth.RNG_NAME))

    def device(lab):
        return synth.render_patch(lab_to_xyz(lab, white), cam, rng)[0]

    jobs = []
    used = sorted({r.shade for r in rows}, key=int)
    size, cols = 32, 6
    sw_img = np.zeros((-(-len(used) // cols) * size, cols * size, 3), dtype=np.uint8)
    entries = []
    for k, shade in enumerate(used):
        rect = ((k % cols) * size, (k // cols) * size, size, size)
        synth.dither_fill(sw_img, rect, device(swatches[shade]))
        entries.append({"shade": shade, "rect": dict(zip("xywh", rect))})
    dataset.write_png(os.path.join(outdir, "swatches.png"), sw_img)
    dataset.write_json(os.path.join(outdir, "swatches.json"), {"image": "swatches.png", "patches": entries})
    jobs.append({"image": "swatches.png", "role": "foundation_swatch", "regions": "swatches.json"})
    for subject in sorted(bare):
        name = f"subject_{subject}_bare_skin.png"
        dataset.write_png(os.path.join(outdir, name), _flat_image(device(bare[subject])))
        jobs.append({"image": name, "role": "bare_skin", "subject": subject, "rect": "0,0,32,32"})
    for row in rows:
        name = f"subject_{row.subject_id}_skin_with_foundation_{row.shade}.png"
        dataset.write_png(os.path.join(outdir, name), _flat_image(device(row.target)))
        jobs.append({"image": name, "role": "skin_with_foundation", "subject": row.subject_id,
                     "shade": row.shade, "rect": "0,0,32,32"})
    # first bare-skin image the detector accepts serves as the chart's Set-1 centroid source
    centroid_src = next((j["image"] for j in jobs if j["role"] == "bare_skin"
                         and skin.skin_mask(dataset.read_image(os.path.join(outdir, j["image"]))).any()), None)
    dataset.write_json(os.path.join(outdir, "manifest.json"),
                       {"jobs": jobs, "skin_centroid_image": centroid_src, "config": config})


def cmd_synth(args):
    white = _white(args)
    cam = _camera(args)
    config = _config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "chart":
        chart = synth.synth_chart(cam=cam, rng=synth.rng_for(args.seed))
        _write_chart_bundle(args.out, chart, cam, config)
    elif args.kind == "dataset":
        rows, mixing, *_ = synth.synth_prediction_dataset(
            args.subjects, args.rows, noise_sigma=args.mix_noise, seed=args.seed, constant=args.constant)
        dataset.save_dataset(os.path.join(args.out, "dataset.csv"), rows)
        dataset.write_json(os.path.join(args.out, "generator.json"),
                           dict(mixing.to_dict(), rng=synth.RNG_NAME, config=config))
    else:
        _write_pipeline(args.out, args, cam, config, white)
    print(f"wrote synthetic {args.kind} bundle to {args.out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (flags take precedence)")
    common.add_argument("--white-point", default="96.42,100,82.52", help="reference white X,Y,Z (default D50)")
    common.add_argument("--svr-c", type=float, default=1.0, help="SVR box constraint C")
    common.add_argument("--svr-eps", type=float, default=0.1, help="SVR tube width epsilon")
    common.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(prog="shadecal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["mask"] = sub.add_parser("mask", parents=[common], help="skin mask of an image")
    p.add_argument("image")
    p.add_argument("--out", required=True, help="output mask PNG; a .json sidecar is written next to it")
    p.set_defaults(func=cmd_mask)

    p = subs["calibrate"] = sub.add_parser("calibrate", parents=[common], help="fit a calibration profile")
    p.add_argument("image")
    p.add_argument("--annotation", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--skin-centroid-from", help="image (skin-detected) or mask sidecar JSON")
    p.add_argument("--skin-centroid", help="explicit R,G,B centroid of Set 1")
    p.add_argument("--profile-in", help="evaluate the chart against this profile instead of fitting")
    p.add_argument("--report", help="report path (default: <out>.report.json)")
    p.add_argument("--out", required=True, help="profile JSON (report JSON with --profile-in)")
    p.set_defaults(func=cmd_calibrate)

    p = subs["extract"] = sub.add_parser("extract", parents=[common], help="calibrated region colors")
    p.add_argument("image")
    p.add_argument("--profile", required=True)
    p.add_argument("--role", required=True, choices=dataset.ROLES)
    p.add_argument("--subject")
    p.add_argument("--shade")
    p.add_argument("--source-id")
    p.add_argument("--mask", action="store_true", help="use the detected skin region")
    p.add_argument("--rect", help="x,y,w,h region")
    p.add_argument("--regions", help="region annotation JSON (central 50%% of each rectangle)")
    p.add_argument("--out", required=True, help="region table CSV (rows are merged by key)")
    p.set_defaults(func=cmd_extract)

    for name, func, help_ in (("train", cmd_train, "fit a prediction model"),
                              ("loocv", cmd_loocv, "leave-one-out evaluation")):
        p = subs[name] = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("dataset", help="dataset CSV or region table CSV")
        p.add_argument("--model", default="linear", choices=sorted(models.MODEL_KINDS))
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = subs["predict"] = sub.add_parser("predict", parents=[common], help="predict skin-with-foundation Lab")
    p.add_argument("--model-file", required=True)
    p.add_argument("--input", required=True, help="skin L,a,b,foundation L,a,b")
    p.set_defaults(func=cmd_predict)

    p = subs["synth"] = sub.add_parser("synth", parents=[common], help="synthetic test bundles")
    p.add_argument("kind", choices=["chart", "dataset", "pipeline"])
    p.add_argument("--gamma", help="camera gamma, one value or R,G,B (default: random in [1.8, 2.4])")
    p.add_argument("--noise", type=float, default=0.0, help="camera noise sigma in device counts")
    p.add_argument("--subjects", type=int, default=19)
    p.add_argument("--rows", type=int, default=63)
    p.add_argument("--mix-noise", type=float, default=0.5, help="noise sigma of the mixing model")
    p.add_argument("--constant", action="store_true", help="targets independent of inputs")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser, subs


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config) as fh:
                cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            print(f"error: cannot read config {known.config}: {exc}", file=sys.stderr)
            return EXIT_INPUT
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        for p in subs.values():
            dests = {a.dest for a in p._actions}
            p.set_defaults(**{k: v for k, v in cfg.items() if k in dests})
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    print(json.dumps({"command": args.command, "config": _config(args)}, sort_keys=True), file=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (skin.NoSkinError, dataset.EmptyRegionError, models.ShortDatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
