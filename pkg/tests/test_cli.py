"""End-to-end tests of the command line, run in-process."""
import sys, os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
import pytest
from scipy.io import wavfile

from src.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_OK, main
from src.data_loader import read_events, read_report_table

FS = 48_000

PASSTHROUGH_ADM = """
[channel.0]
passthrough = true
adm.threshold_sigma = 0
"""

NOISY_ADM = """
[global]
aer.jitter_ns = 5

[channel.0]
passthrough = true
noise.enabled = true
noise.white_density = 2e-5

[channel.3]
pga_gain = 5
noise.enabled = true
noise.white_density = 1e-5
"""


def write(path, text):
    path.write_text(text)
    return str(path)


def error_lines(capsys):
    return [line for line in capsys.readouterr().err.splitlines() if line.startswith("error[")]


def sine_wav(path, freq=100.0, amp=0.2, seconds=0.1):
    t = np.arange(int(FS * seconds)) / FS
    wavfile.write(str(path), FS, (amp * 32768 * np.sin(2 * np.pi * freq * t)).astype(np.int16))
    return str(path)


def sine_csv(path, freq=100.0, amp=0.2, seconds=0.1):
    t = np.arange(int(FS * seconds)) / FS
    x = amp * np.sin(2 * np.pi * freq * t)
    pd.DataFrame({"t_s": t, "value": x}).to_csv(path, index=False, float_format="%.17g")
    return str(path), x


# --- encode ----------------------------------------------------------------------------

def test_encode_silence_gives_header_only(tmp_path):
    cfg = write(tmp_path / "afe.ini", "[channel.0]\n")
    wav = tmp_path / "silence.wav"
    wavfile.write(str(wav), FS, np.zeros(4800, dtype=np.int16))
    out = tmp_path / "events.csv"
    code = main(["encode", "--config", cfg, "--input", str(wav), "--output", str(out), "--seed", "1"])
    assert code == EXIT_OK
    assert out.read_text() == "t_ns,source,channel,polarity\n"


def test_encode_sine_gives_balanced_up_down(tmp_path):
    cfg = write(tmp_path / "afe.ini", PASSTHROUGH_ADM)
    wav = sine_wav(tmp_path / "tone.wav", seconds=0.1)
    out = str(tmp_path / "events.csv")
    assert main(["encode", "--config", cfg, "--input", wav, "--output", out]) == EXIT_OK
    events = read_events(out)
    n_up = sum(e.polarity.value == "UP" for e in events)
    n_dn = len(events) - n_up
    assert n_up > 0 and n_dn > 0
    assert abs(n_up - n_dn) <= 1


def test_encode_is_byte_identical_per_seed(tmp_path):
    cfg = write(tmp_path / "afe.ini", NOISY_ADM)
    wav = sine_wav(tmp_path / "tone.wav", freq=1000.0, amp=0.05, seconds=0.05)
    outs = []
    for k in range(2):
        out = tmp_path / f"events{k}.csv"
        args = ["encode", "--config", cfg, "--input", wav, "--output", str(out), "--seed", "42",
                "--timestamps", "delivery"]
        assert main(args) == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].count(b"\n") > 1

    other = tmp_path / "events_other.csv"
    main(["encode", "--config", cfg, "--input", wav, "--output", str(other), "--seed", "43",
          "--timestamps", "delivery"])
    assert other.read_bytes() != outs[0]


def test_encode_without_seed_when_noisy_fails(tmp_path, capsys):
    cfg = write(tmp_path / "afe.ini", NOISY_ADM)
    wav = sine_wav(tmp_path / "tone.wav")
    code = main(["encode", "--config", cfg, "--input", wav, "--output", str(tmp_path / "e.csv")])
    assert code == EXIT_CONFIG
    err = error_lines(capsys)
    assert err and all(line.startswith("error[config]: seed:") for line in err)


def test_encode_reports_config_violations(tmp_path, capsys):
    cfg = write(tmp_path / "afe.ini", "[channel.0]\nlna_gain = 99\npga_gain = -1\n")
    wav = sine_wav(tmp_path / "tone.wav")
    code = main(["encode", "--config", cfg, "--input", wav, "--output", str(tmp_path / "e.csv"),
                 "--seed", "1"])
    assert code == EXIT_CONFIG
    err = error_lines(capsys)
    assert any(line.startswith("error[config]: channel.0.lna_gain:") for line in err)
    assert any(line.startswith("error[config]: channel.0.pga_gain:") for line in err)


def test_encode_unreadable_input(tmp_path, capsys):
    cfg = write(tmp_path / "afe.ini", PASSTHROUGH_ADM)
    bad = write(tmp_path / "junk.wav", "not a wav file")
    code = main(["encode", "--config", cfg, "--input", bad, "--output", str(tmp_path / "e.csv")])
    assert code == EXIT_INPUT
    assert error_lines(capsys)[0].startswith("error[input]:")


def test_encode_undecodable_config(tmp_path, capsys):
    cfg = tmp_path / "afe.ini"
    cfg.write_bytes(b"[channel.0]\nlna_gain = \xff\n")
    wav = sine_wav(tmp_path / "tone.wav")
    code = main(["encode", "--config", str(cfg), "--input", wav, "--output", str(tmp_path / "e.csv")])
    assert code == EXIT_CONFIG
    assert error_lines(capsys)[0].startswith("error[config]: file:")


# --- decode ----------------------------------------------------------------------------

def test_encode_decode_round_trip(tmp_path):
    cfg = write(tmp_path / "afe.ini", PASSTHROUGH_ADM)
    src, x = sine_csv(tmp_path / "tone.csv")
    events = str(tmp_path / "events.csv")
    recon = str(tmp_path / "recon.csv")
    assert main(["encode", "--config", cfg, "--input", src, "--output", events]) == EXIT_OK
    t_stop = (len(x) - 1) / FS
    assert main(["decode", "--input", events, "--output", recon, "--config", cfg,
                 "--mode", "ADM", "--fs-out", str(FS), "--t-stop", repr(t_stop)]) == EXIT_OK

    y = pd.read_csv(recon)["value"].to_numpy()
    first = int(read_events(events)[0].t_ns * FS // 1e9)
    assert np.abs(y[first:len(x)] - x[first:]).max() <= 0.011 + 1e-9


def test_decode_empty_stream_is_constant(tmp_path):
    events = write(tmp_path / "events.csv", "t_ns,source,channel,polarity\n")
    out = str(tmp_path / "recon.csv")
    code = main(["decode", "--input", events, "--output", out, "--mode", "ADM", "--v0", "0.1",
                 "--fs-out", "1000", "--t-stop", "0.01"])
    assert code == EXIT_OK
    values = pd.read_csv(out)["value"]
    assert len(values) == 11
    assert (values == 0.1).all()


def test_decode_malformed_polarity(tmp_path, capsys):
    events = write(tmp_path / "events.csv",
                   "t_ns,source,channel,polarity\n10,ADM,0,UP\n20,ADM,0,LEFT\n")
    code = main(["decode", "--input", events, "--output", str(tmp_path / "r.csv")])
    assert code == EXIT_INPUT
    assert error_lines(capsys)[0].startswith("error[input]: line 3:")


@pytest.mark.parametrize("flags,name", [
    (["--mode", "PFM", "--window", "0"], "--window"),
    (["--fs-out", "-1"], "--fs-out"),
    (["--smoothing-hz", "30000"], "--smoothing-hz"),
])
def test_decode_rejects_bad_flags(tmp_path, capsys, flags, name):
    events = write(tmp_path / "events.csv", "t_ns,source,channel,polarity\n5,PFM,0,NA\n")
    code = main(["decode", "--input", events, "--output", str(tmp_path / "r.csv")] + flags)
    assert code == EXIT_CONFIG
    assert error_lines(capsys)[0].startswith(f"error[config]: {name}:")


def test_decode_undecodable_event_file(tmp_path, capsys):
    events = tmp_path / "events.csv"
    events.write_bytes(b"t_ns,source,channel,polarity\n10,ADM,0,\xff\xfe\n")
    code = main(["decode", "--input", str(events), "--output", str(tmp_path / "r.csv")])
    assert code == EXIT_INPUT
    assert error_lines(capsys)[0].startswith("error[input]:")


def test_decode_channel_missing_from_config(tmp_path, capsys):
    cfg = write(tmp_path / "afe.ini", "[channel.0]\n")
    events = write(tmp_path / "events.csv", "t_ns,source,channel,polarity\n")
    code = main(["decode", "--input", events, "--output", str(tmp_path / "r.csv"),
                 "--config", cfg, "--channel", "4"])
    assert code == EXIT_CONFIG
    assert error_lines(capsys)[0].startswith("error[config]: channel:")


def test_decode_pfm_rate(tmp_path):
    rows = "".join(f"{k * 1_000_000},PFM,2,NA\n" for k in range(200))
    events = write(tmp_path / "events.csv", "t_ns,source,channel,polarity\n" + rows)
    out = str(tmp_path / "rate.csv")
    assert main(["decode", "--input", events, "--output", out, "--channel", "2",
                 "--window", "0.05", "--fs-out", "1000"]) == EXIT_OK
    rate = pd.read_csv(out)["value"].to_numpy()
    assert rate[100] == pytest.approx(1000.0, abs=20.0)


# --- measure ---------------------------------------------------------------------------

def test_measure_sweep_on_passthrough_is_flat(tmp_path):
    cfg = write(tmp_path / "afe.ini", "[channel.0]\npassthrough = true\n")
    out = str(tmp_path / "sweep.csv")
    assert main(["measure", "sweep", "--config", cfg, "--output", out, "--points", "11"]) == EXIT_OK
    header, table = read_report_table(out)
    assert header["kind"] == "SWEEP"
    assert table["gain_db"].abs().max() < 0.01


def test_measure_rate_writes_fit(tmp_path):
    out = str(tmp_path / "rate.csv")
    assert main(["measure", "rate", "--amps", "0.05:0.4:8", "--duration", "0.2",
                 "--output", out]) == EXIT_OK
    header, table = read_report_table(out)
    assert len(table) == 8
    assert "r2=" in header["fit"]


def test_measure_bank_layout(tmp_path):
    out = str(tmp_path / "bank.csv")
    assert main(["measure", "bank", "--f-lo", "100", "--n", "11", "--points", "15",
                 "--output", out]) == EXIT_OK
    _, table = read_report_table(out)
    assert sorted(table["channel"].unique()) == list(range(11))
    peaks = table.loc[table.groupby("channel")["gain_db"].idxmax(), "freq_hz"].to_numpy()
    np.testing.assert_allclose(peaks, 100.0 * 2.0 ** np.arange(11), rtol=1e-6)


def test_measure_is_deterministic(tmp_path):
    cfg = write(tmp_path / "afe.ini", "[channel.0]\nnoise.enabled = yes\nnoise.white_density = 1e-6\n")
    outs = []
    for k in range(2):
        out = tmp_path / f"psd{k}.csv"
        assert main(["measure", "psd", "--config", cfg, "--seed", "9", "--duration", "0.5",
                     "--seg-len", "1024", "--output", str(out)]) == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_measure_bad_bank_size(tmp_path, capsys):
    code = main(["measure", "bank", "--n", "20", "--output", str(tmp_path / "b.csv")])
    assert code == EXIT_CONFIG
    assert error_lines(capsys)[0].startswith("error[measure]:")


def test_unknown_measure_kind(tmp_path, capsys):
    code = main(["measure", "power", "--output", str(tmp_path / "p.csv")])
    assert code == EXIT_CONFIG
    assert error_lines(capsys)[0].startswith("error[config]:")


def test_measure_plot_writes_html(tmp_path):
    out = str(tmp_path / "rate.csv")
    html = tmp_path / "rate.html"
    assert main(["measure", "rate", "--amps", "0.1,0.2,0.3", "--duration", "0.1",
                 "--output", out, "--plot", str(html)]) == EXIT_OK
    text = html.read_text(encoding="utf-8")
    assert "plotly" in text
    assert "Spike rate (Hz)" in text
