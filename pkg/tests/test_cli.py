import json

from spherical_gof.cli import build_parser, main


def test_synth_render_eval_round(tmp_path, capsys):
    spec = tmp_path / "s.toml"
    spec.write_text('preset = "room"\nn_points = 200\n[camera]\nwidth = 32\nheight = 16\n[trajectory]\nn_views = 3\n')
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "ds")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_views"] == 3
    ds = tmp_path / "ds"
    assert main(["train", "--images", str(ds / "images"), "--poses", str(ds / "poses.txt"),
                 "--points", str(ds / "points.ply"), "--out", str(tmp_path / "run"), "--iterations", "4"]) == 0
    assert json.loads(capsys.readouterr().out)["iterations"] == 4
    assert main(["render", "--scene", str(tmp_path / "run" / "scene.ply"), "--poses", str(ds / "poses.txt"),
                 "--out", str(tmp_path / "pred"), "--tile", "8"]) == 0
    capsys.readouterr()
    assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(ds), "--poses", str(ds / "poses.txt"),
                 "--pairs", "0-1,1-0", "--out", str(tmp_path / "m.csv")]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert len(rows) == 1 and (tmp_path / "m.csv").exists()


def test_errors_exit_2(tmp_path, capsys):
    assert main(["render", "--scene", str(tmp_path / "no.ply"), "--poses", "p", "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["eval", "--pred", str(tmp_path), "--gt", str(tmp_path), "--poses", str(tmp_path / "x")]) == 2


def test_parser_thetas():
    args = build_parser().parse_args(["rotate-eval", "--scene", "s", "--poses", "p", "--thetas", "0,45"])
    assert args.thetas == [0.0, 45.0]
