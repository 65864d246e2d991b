import json
import math

import pytest

from circletrack.cli import EXIT_CONFIG, EXIT_NO_SEQUENCE, main
from circletrack.meeting import parse_rttm, read_segments, read_truth

CONFIG = """\
seed: 3
meetings: 2
sim: {n_speakers: 3, meeting_seconds: 120, move_step_concentration: 300, embedding_noise: 3.0}
kalman: {kappa_z: 300, kappa_phi: 20}
affinity: {kind: speaker+track, weights: [1.0, 1.0], threshold: 0.05}
em: {max_iters: 4}
sweep: {weights: [0.3], thresholds: {start: -0.5, stop: 0.5, num: 3}}
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.yaml"
    cfg.write_text(CONFIG)
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root, cfg


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


def test_simulate_outputs(workspace):
    root, _ = workspace
    names = sorted(p.name for p in (root / "data").iterdir())
    assert names == ["m000.segments.jsonl", "m000.truth.json", "m001.segments.jsonl", "m001.truth.json"]
    truth = read_truth(root / "data" / "m000.truth.json")
    assert truth.n_speakers == 3
    segs = read_segments(root / "data" / "m000.segments.jsonl")
    assert set(truth.segment_speaker) == {s.id for s in segs}


def test_fit_single_iteration(workspace, tmp_path, capsys):
    root, _ = workspace
    cfg = tmp_path / "one.yaml"
    cfg.write_text("em: {max_iters: 1}\n")
    code, out = run(capsys, "fit", root / "data" / "m000.segments.jsonl", "--config", cfg, "--out", tmp_path, "--no-figures")
    assert code == 0 and out.startswith("kappa_z\t")
    rows = (tmp_path / "em_trace.tsv").read_text().splitlines()
    assert len(rows) == 2
    doc = json.loads((tmp_path / "params.json").read_text())
    assert doc["iterations"] == 1 and doc["kappa_z"] > 0


def test_fit_without_observations_exits_3(tmp_path, capsys):
    seg = {"id": "a", "channel": 0, "start_s": 0.0, "end_s": 1.2, "embedding": [1.0, 0.0],
           "frames": [{"t_index": 0}, {"t_index": 1}, {"t_index": 2}]}
    p = tmp_path / "empty.segments.jsonl"
    p.write_text(json.dumps(seg) + "\n")
    code, _ = run(capsys, "fit", p, "--out", tmp_path / "o")
    assert code == EXIT_NO_SEQUENCE


def test_config_errors_exit_2(workspace, tmp_path, capsys):
    root, _ = workspace
    seg = root / "data" / "m000.segments.jsonl"
    assert run(capsys, "diarize", seg, "--config", tmp_path / "nope.yaml", "--out", tmp_path)[0] == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("affinity: {colour: red}\n")
    assert run(capsys, "diarize", seg, "--config", bad, "--out", tmp_path)[0] == EXIT_CONFIG
    assert run(capsys, "diarize", seg, "--weights", "1,x", "--out", tmp_path)[0] == EXIT_CONFIG
    assert run(capsys, "diarize", seg, "--params", tmp_path / "none.json", "--out", tmp_path)[0] == EXIT_CONFIG


def test_missing_segments_exit_1(tmp_path, capsys):
    assert run(capsys, "diarize", tmp_path / "none.jsonl", "--out", tmp_path)[0] == 1


def test_diarize_and_eval(workspace, tmp_path, capsys):
    root, cfg = workspace
    seg = root / "data" / "m000.segments.jsonl"
    truth_path = root / "data" / "m000.truth.json"
    code, _ = run(capsys, "diarize", seg, "--config", cfg, "--out", tmp_path, "--dendrogram")
    assert code == 0
    segs = read_segments(seg)
    rows = parse_rttm((tmp_path / "m000.rttm").read_text())
    assert len(rows) == len(segs)
    merges = json.loads((tmp_path / "m000.dendrogram.json").read_text())
    assert len(merges) == len(segs) - len({r[4] for r in rows})
    assert (tmp_path / "m000.png").stat().st_size > 0
    code, out = run(capsys, "eval", tmp_path / "m000.rttm", truth_path, "--out", tmp_path / "ev")
    assert code == 0 and out.splitlines()[0] == "category\terror_rate\tframes"
    assert (tmp_path / "ev" / "report.tsv").read_text() == out


def _perfect_rttm(segs, truth, path, shuffle=False):
    speakers = sorted(set(truth.segment_speaker.values()), reverse=shuffle)
    lab = {s: k for k, s in enumerate(speakers)}
    lines = [f"SPEAKER m {s.channel} {s.start_s:.2f} {s.end_s - s.start_s:.2f} spk{lab[truth.segment_speaker[s.id]]:02d}" for s in segs]
    path.write_text("\n".join(lines) + "\n")


def test_eval_perfect_and_relabelled(workspace, tmp_path, capsys):
    root, _ = workspace
    segs = read_segments(root / "data" / "m001.segments.jsonl")
    truth = read_truth(root / "data" / "m001.truth.json")
    _perfect_rttm(segs, truth, tmp_path / "a.rttm")
    _perfect_rttm(segs, truth, tmp_path / "b.rttm", shuffle=True)
    truth_path = root / "data" / "m001.truth.json"
    _, out_a = run(capsys, "eval", tmp_path / "a.rttm", truth_path)
    _, out_b = run(capsys, "eval", tmp_path / "b.rttm", truth_path)
    assert out_a == out_b
    assert out_a.splitlines()[1].split("\t")[1] == "0.000000"
    assert out_a.splitlines()[-1] == "# cluster_count_delta\t0"


def test_diarize_threshold_extremes_and_zero_weight(workspace, tmp_path, capsys):
    root, cfg = workspace
    seg = root / "data" / "m000.segments.jsonl"
    n = len(read_segments(seg))
    run(capsys, "diarize", seg, "--config", cfg, "--threshold", "inf", "--out", tmp_path / "hi", "--no-figures")
    assert len({r[4] for r in parse_rttm((tmp_path / "hi" / "m000.rttm").read_text())}) == n
    outs = []
    for kind in ("speaker+kl", "speaker+track"):
        d = tmp_path / kind
        run(capsys, "diarize", seg, "--config", cfg, "--affinity", kind, "--weights", "1,0", "--out", d, "--no-figures")
        outs.append((d / "m000.rttm").read_bytes())
    assert outs[0] == outs[1]


def test_sweep_rows_and_best_replays(workspace, tmp_path, capsys):
    root, cfg = workspace
    code, out = run(capsys, "sweep", root / "data", "--config", cfg, "--out", tmp_path)
    assert code == 0
    rows = (tmp_path / "sweep.tsv").read_text().splitlines()[1:]
    # speaker, speaker+kl@0.3, speaker+track@0.3 times three thresholds
    assert len(rows) == 9
    best = out.strip().split("\t")[1:]
    kind, ws, wl, th, err = best[0], best[1], best[2], best[3], float(best[4])
    errs = []
    for m in ("m000", "m001"):
        d = tmp_path / "replay"
        run(capsys, "diarize", root / "data" / f"{m}.segments.jsonl", "--config", cfg, "--affinity", kind,
            "--weights", f"{ws},{wl}", "--threshold", th, "--out", d, "--no-figures")
        _, ev = run(capsys, "eval", d / f"{m}.rttm", root / "data" / f"{m}.truth.json")
        errs.append(float(ev.splitlines()[1].split("\t")[1]))
    assert sum(errs) / 2 == pytest.approx(err, abs=1e-6)


def test_sweep_single_point(workspace, tmp_path, capsys):
    root, _ = workspace
    cfg = tmp_path / "one.yaml"
    cfg.write_text("sweep: {kinds: [speaker], thresholds: [0.2]}\n")
    assert run(capsys, "sweep", root / "data", "--config", cfg, "--out", tmp_path, "--no-figures")[0] == 0
    assert len((tmp_path / "sweep.tsv").read_text().splitlines()) == 2


def test_denominator(tmp_path, capsys):
    code, _ = run(capsys, "denominator", "--kappas", "0", "1", "100", "--bins", "8", "360", "--n-eval", "90", "--out", tmp_path)
    assert code == 0
    rows = [r.split("\t") for r in (tmp_path / "denominator.tsv").read_text().splitlines()[1:]]
    assert len(rows) == 3 * 2 * 90
    flat = {(float(k), int(b)): float(f) for k, b, f in (r.split("\t") for r in (tmp_path / "flatness.tsv").read_text().splitlines()[1:])}
    assert flat[(0.0, 8)] == 0.0 and flat[(0.0, 360)] == 0.0
    assert flat[(100.0, 8)] > 1e3 * max(flat[(1.0, 360)], 1e-300)
    assert run(capsys, "denominator", "--kappas", "-1", "--out", tmp_path)[0] == EXIT_CONFIG


def test_all_commands_deterministic(workspace, tmp_path, capsys):
    root, cfg = workspace
    seg = root / "data" / "m000.segments.jsonl"
    for k in ("a", "b"):
        d = tmp_path / k
        run(capsys, "simulate", "--config", cfg, "--out", d / "data")
        run(capsys, "fit", d / "data" / "m000.segments.jsonl", "--config", cfg, "--out", d / "fit")
        run(capsys, "diarize", seg, "--config", cfg, "--params", d / "fit" / "params.json", "--dendrogram", "--out", d / "dia")
        run(capsys, "eval", d / "dia" / "m000.rttm", root / "data" / "m000.truth.json", "--out", d / "ev")
        run(capsys, "sweep", d / "data", "--config", cfg, "--out", d / "sw")
        run(capsys, "denominator", "--n-eval", "40", "--out", d / "den")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and any(p.suffix == ".png" for p in files_a)
    for p in files_a:
        assert (tmp_path / "a" / p).read_bytes() == (tmp_path / "b" / p).read_bytes(), p
    # seed override changes the simulation
    run(capsys, "simulate", "--config", cfg, "--seed", "99", "--out", tmp_path / "c")
    assert (tmp_path / "c" / "m000.segments.jsonl").read_bytes() != (tmp_path / "a" / "data" / "m000.segments.jsonl").read_bytes()
