import pytest

from frm.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, main


def test_bad_experiment():
    assert main(["nope"]) == EXIT_CONFIG


def test_unknown_key(capsys):
    assert main(["linreg", "--override", "linreg.zzz=1"]) == EXIT_CONFIG
    assert "unknown config keys" in capsys.readouterr().err


def test_bad_seeds():
    assert main(["linreg", "--seeds", "a,b"]) == EXIT_CONFIG
    assert main(["linreg", "--seeds", ""]) == EXIT_CONFIG


def test_linreg_stdout(capsys):
    code = main(["linreg", "--seeds", "0,1", "--override", "linreg.dims=[1]", "--override", "linreg.n_test=100"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("alpha,dim,quantity,n,mean,p2_5,p97_5\n") and "ratio:erm/frm" in out


def test_linreg_out_dir(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('experiment = "linreg"\nseeds = [0]\nlinreg.dims = [1]\nlinreg.alphas = [1.0]\n')
    assert main(["linreg", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["config.echo", "rows.csv", "summary.csv"]
    # rerunning from the echoed config reproduces the rows byte for byte
    assert main(["linreg", "--config", str(tmp_path / "o" / "config.echo"), "--out", str(tmp_path / "p")]) == EXIT_OK
    assert (tmp_path / "o" / "rows.csv").read_bytes() == (tmp_path / "p" / "rows.csv").read_bytes()


@pytest.mark.slow
def test_check_corrupt_gradient(capsys):
    code = main(["check", "--override", "check.corrupt=gradient"])
    out = capsys.readouterr().out
    assert code == EXIT_CHECK_FAILED
    assert "FAIL gradient-vs-finite-difference" in out
