"""Build the extension module and exercise it from Python.

    python python/smoke_test.py
"""

import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build(dest: pathlib.Path) -> None:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "admelabel-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libadmelabel_py.so"
    shutil.copy(lib, dest / "admelabel.so")


def main() -> None:
    tmp = pathlib.Path(tempfile.mkdtemp())
    build(tmp)
    sys.path.insert(0, str(tmp))
    import admelabel

    assert admelabel.TOPICS == ["Absorption", "Distribution", "Metabolism", "Excretion", "Other"]

    xml = (ROOT / "fixtures" / "spl" / "methotrexate-oral-solution.xml").read_bytes()
    set_id, app, version, segments = admelabel.parse_label(xml)
    assert app.startswith("NDA") and version >= 1 and segments
    rows = admelabel.annotate_label(xml)
    assert sorted({t for _, t, _ in rows}) == ["Absorption", "Distribution", "Excretion", "Metabolism"]

    assert admelabel.rule_classify(["Food slows the absorption of the tablet."]) == ["Absorption"]
    assert admelabel.macro_f1(["Other"] * 5, list(admelabel.TOPICS)) < 0.2

    labeled, unlabeled = admelabel.synthetic_corpus(paragraphs=200, unlabeled=10, seed=1)
    assert len(labeled) == 200 and len(unlabeled) == 10
    texts = [t for t, _ in labeled]
    labels = [l for _, l in labeled]
    folds = admelabel.stratified_kfold(labels, k=5, seed=0)
    assert sorted(set(folds)) == [0, 1, 2, 3, 4]

    model = admelabel.Model.train("logreg", texts, labels, seed=0)
    path = tmp / "logreg.json"
    model.save(str(path))
    again = admelabel.Model.load(str(path))
    assert again.kind == "logreg"
    assert again.predict(texts) == model.predict(texts)

    try:
        admelabel.Model.train("bert", texts, labels)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model accepted")

    print("python bindings ok")


if __name__ == "__main__":
    main()
