"""Shared fixtures: a small toy generator, a miniature on-disk benchmark,
and the acceptance verdict log.

The miniature benchmark is session-scoped because building one takes a few
seconds and several CLI tests only need *a* valid benchmark directory, not
a fresh one. Tests that mutate files must copy it first.
"""

import sys

import pytest

from pdfuse.synthetic_bench import BenchmarkSpec, ToyGeneratorSpec, build_benchmark, make_toy_generator

_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Recorder for one PASS/FAIL line per acceptance criterion.

    Lines are replayed in the terminal summary so they survive output
    capture, and the recorder asserts on failure so the criterion's test
    still fails normally.
    """
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
        lines.append(line)
        print(line, file=sys.__stderr__, flush=True)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    lines = terminalreporter.config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

TINY_BENCH_SPEC = BenchmarkSpec(
    n_per_class=4,
    n_expression_samples=8,
    gait_frames=64,
    seed=7,
)


@pytest.fixture(scope="session")
def small_generator():
    """16-latent, 8x8 single-channel toy generator plus its exact inverse."""
    spec = ToyGeneratorSpec(latent_dim=16, height=8, width=8, channels=1, seed=3)
    return make_toy_generator(spec)


@pytest.fixture(scope="session")
def tiny_bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    build_benchmark(TINY_BENCH_SPEC, out)
    return out
