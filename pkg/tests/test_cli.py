import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from dropspread.cli import main
from tests.conftest import disk_mask, synthetic_sample


@pytest.fixture()
def runner():
    return CliRunner()


def write_annotations(dir_path, count=2):
    dir_path.mkdir(parents=True, exist_ok=True)
    for i, (cy, cx, r) in enumerate([(16, 16, 9), (20, 10, 6), (8, 22, 5)][:count]):
        sample = synthetic_sample(f"frame{i}", 32, cy, cx, r, seed=i + 1)
        Image.fromarray((sample.image * 255).astype(np.uint8)).save(
            dir_path / f"frame{i}.png")
        Image.fromarray(sample.mask * 255).save(dir_path / f"frame{i}_mask.png")


def write_growing_disk_frames(dir_path, count=8, side=32):
    dir_path.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        sample = synthetic_sample(f"f{i}", side, side // 2, side // 2,
                                  4 + i, seed=i)
        Image.fromarray((sample.image * 255).astype(np.uint8)).save(
            dir_path / f"frame_{i:06d}.png")


TRAIN_ARGS = ["--epochs", "5", "--seed", "3", "--side", "32", "--depth", "2",
              "--base-channels", "2", "--learning-rate", "0.003"]


@pytest.fixture()
def trained(tmp_path, runner):
    ann = tmp_path / "annotations"
    write_annotations(ann)
    ckpt = tmp_path / "model.npz"
    hist = tmp_path / "history.csv"
    result = runner.invoke(main, ["train", "--annotations", str(ann),
                                  "--checkpoint", str(ckpt), "--history",
                                  str(hist)] + TRAIN_ARGS)
    assert result.exit_code == 0, result.output
    return ckpt, hist


class TestTrainCommand:
    def test_writes_checkpoint_and_history(self, trained):
        ckpt, hist = trained
        assert ckpt.is_file()
        lines = hist.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        assert len(lines) == 6  # header + 5 epochs

    def test_missing_annotation_dir(self, tmp_path, runner):
        result = runner.invoke(main, ["train", "--annotations",
                                      str(tmp_path / "missing"),
                                      "--checkpoint", str(tmp_path / "c.npz"),
                                      "--history", str(tmp_path / "h.csv")])
        assert result.exit_code != 0
        assert not (tmp_path / "c.npz").exists()

    def test_same_seed_byte_identical_history(self, tmp_path, runner):
        ann = tmp_path / "annotations"
        write_annotations(ann)
        outputs = []
        for tag in ("one", "two"):
            ckpt = tmp_path / f"{tag}.npz"
            hist = tmp_path / f"{tag}.csv"
            result = runner.invoke(main, ["train", "--annotations", str(ann),
                                          "--checkpoint", str(ckpt),
                                          "--history", str(hist)] + TRAIN_ARGS)
            assert result.exit_code == 0, result.output
            outputs.append(hist.read_bytes())
        assert outputs[0] == outputs[1]

    def test_config_file(self, tmp_path, runner):
        ann = tmp_path / "annotations"
        write_annotations(ann)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("config_version = 1\nepochs = 2\nseed = 1\nside = 32\n"
                       "depth = 2\nbase_channels = 2\n")
        result = runner.invoke(main, ["train", "--config", str(cfg),
                                      "--annotations", str(ann),
                                      "--checkpoint", str(tmp_path / "c.npz"),
                                      "--history", str(tmp_path / "h.csv")])
        assert result.exit_code == 0, result.output
        assert len((tmp_path / "h.csv").read_text().strip().splitlines()) == 3

    def test_config_version_required(self, tmp_path, runner):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 2\n")
        result = runner.invoke(main, ["train", "--config", str(cfg),
                                      "--annotations", str(tmp_path),
                                      "--checkpoint", str(tmp_path / "c.npz"),
                                      "--history", str(tmp_path / "h.csv")])
        assert result.exit_code != 0
        assert "config_version" in result.output


class TestPredictCommand:
    def test_writes_mask(self, trained, tmp_path, runner):
        ckpt, _ = trained
        frames = tmp_path / "frames"
        write_growing_disk_frames(frames, count=1)
        out = tmp_path / "mask.png"
        result = runner.invoke(main, ["predict", "--checkpoint", str(ckpt),
                                      "--image", str(frames / "frame_000000.png"),
                                      "--out", str(out), "--side", "32"])
        assert result.exit_code == 0, result.output
        mask = np.asarray(Image.open(out))
        assert set(np.unique(mask)) <= {0, 255}

    def test_corrupt_checkpoint(self, tmp_path, runner):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"junk")
        frames = tmp_path / "frames"
        write_growing_disk_frames(frames, count=1)
        result = runner.invoke(main, ["predict", "--checkpoint", str(bad),
                                      "--image", str(frames / "frame_000000.png"),
                                      "--out", str(tmp_path / "m.png")])
        assert result.exit_code != 0
        assert "bad.npz" in result.output


class TestMeasureCommand:
    def test_series_csv(self, trained, tmp_path, runner):
        ckpt, _ = trained
        frames = tmp_path / "frames"
        write_growing_disk_frames(frames, count=10)
        out = tmp_path / "series.csv"
        result = runner.invoke(main, [
            "measure", "--checkpoint", str(ckpt), "--frames", str(frames),
            "--out", str(out), "--concentration", "200",
            "--microns-per-pixel", "50", "--fps", "30", "--side", "32"])
        assert result.exit_code == 0, result.output
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "frame_index,timestamp_s,wet_pixels,area_mm2"
        assert len(lines) == 11
        assert "# concentration_ul_per_l = 200" in out.read_text()

    def test_growing_disk_increasing_area(self, trained, tmp_path, runner):
        from dropspread.area import read_series

        ckpt, _ = trained
        frames = tmp_path / "frames"
        write_growing_disk_frames(frames, count=8)
        out = tmp_path / "series.csv"
        result = runner.invoke(main, [
            "measure", "--checkpoint", str(ckpt), "--frames", str(frames),
            "--out", str(out), "--concentration", "100",
            "--microns-per-pixel", "50", "--side", "32"])
        assert result.exit_code == 0, result.output
        samples, _ = read_series(out)
        areas = [s.area_mm2 for s in samples]
        assert all(b > a for a, b in zip(areas, areas[1:]))

    def test_corrupt_checkpoint(self, tmp_path, runner):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"junk")
        frames = tmp_path / "frames"
        write_growing_disk_frames(frames, count=2)
        result = runner.invoke(main, ["measure", "--checkpoint", str(bad),
                                      "--frames", str(frames),
                                      "--out", str(tmp_path / "s.csv"),
                                      "--concentration", "100"])
        assert result.exit_code != 0
        assert "bad.npz" in result.output


def write_series_file(path, concentration, areas):
    from dropspread.area import AreaSample, write_series

    samples = [AreaSample(float(i), int(a * 10), float(a))
               for i, a in enumerate(areas)]
    write_series(samples, path, metadata={"concentration_ul_per_l": concentration})


class TestSummarizeCommand:
    def test_seven_series_summary(self, tmp_path, runner):
        rng = np.random.default_rng(0)
        paths = []
        for i, conc in enumerate([50, 100, 200, 300, 400, 500, 900]):
            peak = 5.0 + i * 3
            areas = np.concatenate([np.linspace(0, peak, 15),
                                    peak + rng.uniform(-0.01, 0.01, 15) * peak,
                                    np.linspace(peak, peak * 0.7, 10)])
            path = tmp_path / f"series_{conc}.csv"
            write_series_file(path, conc, areas)
            paths.append(str(path))
        out = tmp_path / "summary.csv"
        plots = tmp_path / "plots"
        result = runner.invoke(main, ["summarize", *paths, "--out", str(out),
                                      "--cmc", "80", "--plot-dir", str(plots)])
        assert result.exit_code == 0, result.output
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 8
        fractions = [float(l.split(",")[1]) for l in lines[1:]]
        assert fractions == pytest.approx([0.625, 1.25, 2.5, 3.75, 5.0, 6.25, 11.25])
        assert (plots / "max_area_vs_cmc_fraction.png").is_file()
        assert (plots / "area_vs_time.png").is_file()

    def test_constant_series_zero_error(self, tmp_path, runner):
        path = tmp_path / "series.csv"
        write_series_file(path, 100, [4.0] * 10)
        out = tmp_path / "summary.csv"
        result = runner.invoke(main, ["summarize", str(path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        row = out.read_text().strip().splitlines()[1].split(",")
        assert float(row[2]) == pytest.approx(4.0)
        assert float(row[3]) == 0.0
        assert row[4] == "0"

    def test_missing_concentration_metadata(self, tmp_path, runner):
        from dropspread.area import AreaSample, write_series

        path = tmp_path / "series.csv"
        write_series([AreaSample(float(i), i, float(i)) for i in range(6)], path)
        result = runner.invoke(main, ["summarize", str(path),
                                      "--out", str(tmp_path / "summary.csv")])
        assert result.exit_code != 0
        assert "concentration" in result.output


class TestCmcFitCommand:
    def write_csv(self, path, points):
        lines = ["concentration_ul_per_l,surface_tension_mN_per_m"]
        lines += [f"{c},{t}" for c, t in points]
        path.write_text("\n".join(lines) + "\n")

    def two_line_data(self):
        from tests.test_cmc import two_line_points

        return [(p.concentration_ul_per_l, p.surface_tension_mN_per_m)
                for p in two_line_points()]

    def test_report(self, tmp_path, runner):
        path = tmp_path / "sft.csv"
        self.write_csv(path, self.two_line_data())
        out = tmp_path / "report.txt"
        result = runner.invoke(main, ["cmc-fit", "--input", str(path),
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert "cmc_ul_per_l = 80" in out.read_text()

    def test_too_few_points(self, tmp_path, runner):
        path = tmp_path / "sft.csv"
        self.write_csv(path, self.two_line_data()[:4])
        result = runner.invoke(main, ["cmc-fit", "--input", str(path)])
        assert result.exit_code != 0
        assert "at least" in result.output

    def test_parallel_lines(self, tmp_path, runner):
        path = tmp_path / "sft.csv"
        xs = np.geomspace(5, 500, 8)
        self.write_csv(path, [(float(c), float(40 - 3 * np.log(c))) for c in xs])
        result = runner.invoke(main, ["cmc-fit", "--input", str(path)])
        assert result.exit_code != 0
        assert "parallel" in result.output


class TestExtractFramesCommand:
    def test_missing_utility_message(self, tmp_path, runner, monkeypatch):
        video = tmp_path / "v.mp4"
        video.write_bytes(b"\x00" * 16)
        monkeypatch.setattr("shutil.which", lambda name: None)
        result = runner.invoke(main, ["extract-frames", "--video", str(video),
                                      "--out", str(tmp_path / "frames")])
        assert result.exit_code != 0
        assert "pre-extract" in result.output
