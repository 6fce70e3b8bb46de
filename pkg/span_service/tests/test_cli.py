import json

from span_service.cli import main
from span_service.model import QUESTION

from conftest import toy_records


def write_qa(path, records):
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps({
                "id": record.id, "question": record.question,
                "context": record.context,
                "answer_text": record.answer_text,
                "answer_start": record.answer_start}) + "\n")


def test_help_exits_clean():
    assert main(["--help"]) == 0


def test_train_and_export_commands(tmp_path, capsys):
    records = toy_records(8)
    train_path = tmp_path / "train.jsonl"
    write_qa(str(train_path), records)
    ckpt = tmp_path / "ckpt"
    rc = main(["train", "--train", str(train_path),
               "--checkpoint-dir", str(ckpt),
               "--epochs", "12", "--max-length", "64", "--stride", "16",
               "--stop-em", "1.0"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "best checkpoint" in out
    assert (ckpt / "best").exists()

    preds = tmp_path / "preds.jsonl"
    rc = main(["export", "--checkpoint", str(ckpt / "best"),
               "--qa", str(train_path), "--out", str(preds)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "exported 8 predictions" in out
    assert len(preds.read_text().splitlines()) == 8


def test_train_mixes_second_source_fraction(tmp_path, capsys):
    base = toy_records(8)
    mixed = toy_records(8, seed=11)
    renamed = [r.__class__(id=f"uw-{i}", question=QUESTION,
                           context=r.context, answer_text=r.answer_text,
                           answer_start=r.answer_start)
               for i, r in enumerate(mixed)]
    train_path = tmp_path / "ms.jsonl"
    mix_path = tmp_path / "uw.jsonl"
    write_qa(str(train_path), base)
    write_qa(str(mix_path), renamed)
    rc = main(["train", "--train", str(train_path),
               "--mix-valid", str(mix_path), "--mix-fraction", "0.25",
               "--checkpoint-dir", str(tmp_path / "ckpt"),
               "--epochs", "1", "--max-length", "64", "--stride", "16"])
    out = capsys.readouterr().out
    assert rc == 0
    # floor(8 * 0.25) = 2 records folded in
    assert "mixed in 2 of 8" in out


def test_train_usage_error(tmp_path):
    assert main(["train", "--checkpoint-dir", str(tmp_path)]) == 1
