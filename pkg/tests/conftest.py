import csv
import time
from pathlib import Path

import numpy as np
import pytest

from memenc import pipeline
from memenc.checkpoint import load_checkpoint
from memenc.cli import main
from memenc.config import load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DESK = CONFIGS / "desk_whitebox.json"
DESK_BLACKBOX = CONFIGS / "desk_blackbox.json"


def pytest_addoption(parser):
    parser.addoption("--full", action="store_true", default=False,
                     help="run the MNIST reproduction check (needs IDX files)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full"):
        return
    skip = pytest.mark.skip(reason="needs --full")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)


def read_row(path):
    with open(path, newline="") as fh:
        return {k: float(v) for k, v in next(csv.DictReader(fh)).items()}


class Desk:
    """Desk benchmark run: config, key, split, models and metric rows."""


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    d = tmp_path_factory.mktemp("desk")
    ctx = Desk()
    ctx.dir = d
    ctx.seconds = []
    for run in (1, 2):
        t0 = time.perf_counter()
        rc = main(["encode", "--config", str(DESK), "--out", str(d / f"enc{run}.ckpt"),
                   "--metrics-out", str(d / f"metrics{run}.csv"),
                   "--report", str(d / f"report{run}.csv"), "--key-out", str(d / "key.json"),
                   "--members-out", str(d / "members.json")])
        ctx.seconds.append(time.perf_counter() - t0)
        assert rc == 0
    assert main(["train-baseline", "--config", str(DESK), "--out", str(d / "base.ckpt"),
                 "--metrics-out", str(d / "base_metrics.csv")]) == 0

    ctx.cfg = load_config(DESK)
    ctx.key = pipeline.load_key(d / "key.json")
    train, test, n_classes = pipeline.load_data(ctx.cfg)
    ctx.split = pipeline.split_from_members(train, test, pipeline.load_members(d / "members.json"),
                                            n_classes)
    ctx.model, _ = load_checkpoint(d / "enc1.ckpt")
    ctx.metrics = read_row(d / "metrics1.csv")
    ctx.base_metrics = read_row(d / "base_metrics.csv")
    return ctx


@pytest.fixture(scope="session")
def desk_blackbox():
    return pipeline.run_encode(load_config(DESK_BLACKBOX))


@pytest.fixture(scope="session")
def transfer_trace(desk):
    """Fine-tune the desk model on an independent blob task for 60 epochs,
    decoding the original members every 10 epochs."""
    from memenc.datasets import gen_benchmark
    from memenc.robustness import transfer_finetune

    (x2, y2), _ = gen_benchmark(99, n_classes=5, per_class=600, q=desk.split.q)
    trace = {}

    def record(epoch, model):
        if epoch % 10 == 0:
            trace[epoch] = pipeline.evaluate(model, desk.key, desk.split, desk.cfg)["enc_auc"]

    transfer_finetune(desk.model, x2, y2, 5, epochs=60, lr=0.001, batch_size=128, seed=3,
                      on_epoch=record)
    return trace
