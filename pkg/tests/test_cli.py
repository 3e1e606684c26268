import csv
import hashlib
import io
import json
import subprocess
import sys

import pytest

from restoroute import __version__
from restoroute.cli import EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_WARNING, main
from restoroute.media import save_clip
from restoroute.router import t_full, t_tree
from restoroute.scenes import synthetic_scene

from conftest import HAND, mos_oracle


def read_table(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# restoroute-{__version__}, seed=")
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    gt_dir = root / "gt"
    for i in range(2):
        save_clip(synthetic_scene(64, 48, 6, 30.0, seed=i, clip_id=f"scene{i}"), gt_dir / f"scene{i}")
    out = root / "data"
    assert main(["synth", "--gt", str(gt_dir), "--out", str(out), "--recipe", '{"1": 1, "2": 1}', "--seed", "3"]) == 0
    return root, gt_dir, out


def write_ratings(path, rows):
    lines = ["subject,video,score"]
    for s, row in enumerate(rows):
        lines += [f"s{s + 1},v{j + 1},{r}" for j, r in enumerate(row)]
    path.write_text("\n".join(lines) + "\n")
    return path


# --- usage and exit codes -----------------------------------------------------


def test_usage_errors(capsys, tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["synth"]) == EXIT_USAGE
    assert main(["bench-routing", "--bogus", "1", "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE
    assert main(["restore", "--clip", "c", "--out", "o", "--strategy", "nope"]) == EXIT_USAGE
    assert main(["bench-routing", "--n-max", "9", "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE
    assert main(["bench-routing", "--threads", "0", "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE
    err = capsys.readouterr().err.strip().splitlines()
    assert err and all(line.startswith("restoroute:") for line in err)


def test_io_and_data_errors(tmp_path):
    assert main(["identify", "--clip", str(tmp_path / "missing")]) == EXIT_IO
    assert main(["mos", "--ratings", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o.csv")]) == EXIT_IO
    bad = tmp_path / "bad.csv"
    bad.write_text("who,what\n1,2\n")
    assert main(["mos", "--ratings", str(bad), "--out", str(tmp_path / "o.csv")]) == EXIT_DATA


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "restoroute", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "restoroute", "mos"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE


# --- bench-routing and --config ----------------------------------------------


def test_bench_routing_p1(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench-routing", "--n-min", "1", "--n-max", "4", "--p", "1.0", "--trials", "200", "--out", str(out)]) == 0
    rows = read_table(out)
    assert len(rows) == 12
    for row in rows:
        n = int(row["n"])
        assert int(row["t_full"]) == t_full(n) and int(row["t_tree"]) == t_tree(n)
        if row["strategy"] == "ours":
            assert float(row["mean_invocations"]) == n == int(row["max_invocations"])
        if row["strategy"] == "full":
            assert float(row["mean_invocations"]) == t_full(n)


def test_config_file_merges_and_flags_win(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_min": 2, "n-max": 2, "p": 1.0, "trials": 10, "seed": 5}))
    out = tmp_path / "b.csv"
    assert main(["bench-routing", "--config", str(cfg), "--out", str(out), "--seed", "9"]) == 0
    assert out.read_text().splitlines()[0].endswith("seed=9")
    rows = read_table(out)
    assert {r["n"] for r in rows} == {"2"} and {r["trials"] for r in rows} == {"10"}

    cfg.write_text(json.dumps({"out": str(tmp_path / "c.csv"), "trials": 5, "n_max": 1}))
    assert main(["bench-routing", "--config", str(cfg)]) == 0
    assert (tmp_path / "c.csv").exists()

    cfg.write_text(json.dumps({"colour": "blue"}))
    assert main(["bench-routing", "--config", str(cfg), "--out", str(out)]) == EXIT_USAGE
    cfg.write_text("{not json")
    assert main(["bench-routing", "--config", str(cfg), "--out", str(out)]) == EXIT_USAGE


# --- mos ----------------------------------------------------------------------


def test_mos_matches_oracle_csv_bytes(tmp_path):
    ratings = write_ratings(tmp_path / "r.csv", HAND)
    out = tmp_path / "mos.csv"
    assert main(["mos", "--ratings", str(ratings), "--out", str(out), "--seed", "4"]) == 0
    expected = [f"# restoroute-{__version__}, seed=4", "video,mos,n_raters"]
    expected += [f"v{j + 1},{m:.9f},3" for j, m in enumerate(mos_oracle(HAND))]
    assert out.read_bytes() == ("\n".join(expected) + "\n").encode()


def test_mos_screens_outlier_subject(tmp_path):
    rows = [[2 if j % 2 == 0 else 1 for j in range(20)] for _ in range(30)]
    rows[7] = [4 if j % 2 == 0 else 5 for j in range(20)]
    ratings = write_ratings(tmp_path / "r.csv", rows)
    screened, raw = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["mos", "--ratings", str(ratings), "--out", str(screened)]) == 0
    assert main(["mos", "--ratings", str(ratings), "--out", str(raw), "--no-screen"]) == 0
    counts = lambda p: {r["n_raters"] for r in read_table(p)}
    assert counts(raw) == {"30"}
    assert counts(screened) == {"29"}


# --- dataset, identify, restore, eval ---------------------------------------


def test_synth_is_deterministic(dataset, tmp_path):
    root, gt_dir, out = dataset
    again = tmp_path / "again"
    assert main(["synth", "--gt", str(gt_dir), "--out", str(again), "--recipe", '{"1": 1, "2": 1}', "--seed", "3"]) == 0
    assert tree_digest(again) == tree_digest(out)
    manifest = json.loads((out / "dataset.json").read_text())
    assert len(manifest["clips"]) == 4
    assert main(["synth", "--gt", str(gt_dir), "--out", str(tmp_path / "x"), "--recipe", "{bad"]) == EXIT_DATA


def test_identify_oracle_and_heuristic(dataset, capsys):
    _, _, out = dataset
    manifest = json.loads((out / "dataset.json").read_text())
    entry, label = manifest["clips"][0], manifest["labels"][0]
    clip_dir = str(out / entry["path"])
    assert main(["identify", "--clip", clip_dir, "--identifier", "oracle", "--manifest", str(out)]) == 0
    profile = json.loads(capsys.readouterr().out)
    truth = {s["kind"] for s in label["specs"]}
    assert {k for k, v in profile["severity"].items() if v != "none"} == truth
    assert main(["identify", "--clip", clip_dir, "--manifest", str(out)]) == 0
    assert set(json.loads(capsys.readouterr().out)["severity"]) >= truth
    assert main(["identify", "--clip", clip_dir, "--identifier", "oracle"]) == EXIT_USAGE


def test_restore_twice_is_hash_equal(dataset, tmp_path, capsys):
    _, _, out = dataset
    manifest = json.loads((out / "dataset.json").read_text())
    entry = manifest["clips"][1]
    digests = []
    for i in range(2):
        dst, trace = tmp_path / f"r{i}", tmp_path / f"t{i}.jsonl"
        code = main(["restore", "--clip", str(out / entry["path"]), "--out", str(dst), "--manifest", str(out),
                     "--identifier", "oracle", "--assessor", "psnr", "--trace", str(trace), "--seed", "1",
                     "--kb", str(tmp_path / "kb.json")])
        assert code in (EXIT_OK, EXIT_WARNING)
        digests.append(tree_digest(dst))
        assert trace.read_text().count('"event": "done"') == 1
    assert digests[0] == digests[1]
    summary = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert summary["status"] in ("done", "exhausted", "cap")
    assert json.loads((tmp_path / "kb.json").read_text())["records"]


def test_restore_warning_exit_code(dataset, tmp_path):
    _, _, out = dataset
    manifest = json.loads((out / "dataset.json").read_text())
    double = next(c for c, l in zip(manifest["clips"], manifest["labels"]) if len(l["specs"]) == 2)
    code = main(["restore", "--clip", str(out / double["path"]), "--out", str(tmp_path / "o"), "--manifest", str(out),
                 "--identifier", "oracle", "--max-iterations", "1"])
    assert code == EXIT_WARNING


def test_restore_psnr_needs_reference(dataset, tmp_path):
    _, _, out = dataset
    clip_dir = out / json.loads((out / "dataset.json").read_text())["clips"][0]["path"]
    code = main(["restore", "--clip", str(clip_dir), "--out", str(tmp_path / "o"), "--assessor", "psnr"])
    assert code == EXIT_USAGE


def test_eval_table(dataset, tmp_path):
    _, gt_dir, _ = dataset
    out = tmp_path / "eval.csv"
    assert main(["eval", "--test", str(gt_dir), "--ref", str(gt_dir), "--out", str(out)]) == 0
    rows = read_table(out)
    assert [r["clip"] for r in rows] == ["scene0", "scene1"]
    assert all(float(r["psnr_db"]) == 100.0 and float(r["ssim"]) == pytest.approx(1.0) for r in rows)
    assert list(rows[0]) == ["clip", "psnr_db", "ssim", "nr_score"]
    assert main(["eval", "--test", str(gt_dir), "--ref", str(tmp_path), "--out", str(out)]) == EXIT_IO
