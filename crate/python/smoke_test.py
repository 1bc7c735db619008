"""Smoke test for the mvdbg_py extension.

Build and install it first:
    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml
"""

import json

import mvdbg_py


def main():
    assert "knock" in mvdbg_py.fixtures()

    r = mvdbg_py.analyze("fixture:app_b")
    assert (r["paths"], r["max_options"], r["complete"]) == (2, 2, True), r
    assert json.loads(r["tree"])["root"] == 0

    r = mvdbg_py.analyze("fixture:loop_if", domains={"chip_analog_read": (0, 7)})
    assert r["paths"] == 8, r

    effects, status = mvdbg_py.run("fixture:knock", env="constant:0", max_steps=40)
    assert effects[0].endswith("chip_digital_write(13, 0)"), effects
    assert status == "running"

    log, failure = mvdbg_py.run_script(
        "fixture:app_b", "break+ main:1\nplay\nsuggest\nexpect-path-count 2\n"
    )
    assert failure is None, (log, failure)
    _, failure = mvdbg_py.run_script("fixture:app_b", "slide 999\n")
    assert "unknown node 999" in failure

    csv = mvdbg_py.bench(instructions=2000, repeats=1).splitlines()
    assert csv[0].startswith("mode,instructions,")
    assert [row.split(",")[0] for row in csv[1:]] == ["plain", "trace", "snapshot"]

    try:
        mvdbg_py.run("(module (func", env="seeded:0")
    except ValueError as e:
        print("parse errors surface as ValueError:", e)
    else:
        raise AssertionError("bad source accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
