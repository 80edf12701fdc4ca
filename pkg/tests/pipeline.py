"""Drive the CLI in-process, the way a user would chain the subcommands."""
import contextlib
import io
import json
import os

from shadecal.cli import main


def run(*argv):
    """Run one subcommand; returns (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def check(*argv):
    code, out, err = run(*argv)
    assert code == 0, f"{argv[0]} exited {code}: {err}"
    return out


def run_pipeline(workdir, seed, model="linear", extra_synth=()):
    """synth -> mask -> calibrate -> extract (every manifest job) -> loocv.

    Returns the parsed loocv report.
    """
    bundle = os.path.join(workdir, "bundle")
    check("synth", "pipeline", "--seed", seed, "--out", bundle, *extra_synth)
    with open(os.path.join(bundle, "manifest.json")) as fh:
        manifest = json.load(fh)
    skin_png = os.path.join(workdir, "skin.png")
    check("mask", os.path.join(bundle, manifest["skin_centroid_image"]), "--out", skin_png)
    profile = os.path.join(workdir, "profile.json")
    check("calibrate", os.path.join(bundle, "chart.png"),
          "--annotation", os.path.join(bundle, "chart_annotation.json"),
          "--references", os.path.join(bundle, "references.csv"),
          "--skin-centroid-from", os.path.join(workdir, "skin.json"), "--out", profile)
    regions = os.path.join(workdir, "regions.csv")
    for job in manifest["jobs"]:
        argv = ["extract", os.path.join(bundle, job["image"]), "--profile", profile,
                "--role", job["role"], "--out", regions]
        if "subject" in job:
            argv += ["--subject", job["subject"]]
        if "shade" in job:
            argv += ["--shade", job["shade"]]
        if "rect" in job:
            argv += ["--rect", job["rect"]]
        else:
            argv += ["--regions", os.path.join(bundle, job["regions"])]
        check(*argv)
    report = os.path.join(workdir, f"loocv_{model}.json")
    check("loocv", regions, "--model", model, "--out", report)
    with open(report) as fh:
        return json.load(fh)
