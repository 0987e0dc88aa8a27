from __future__ import annotations

import json
import logging

import pytest
from hypothesis import given, settings, strategies as st

from rlindex.ingest import (
    MissingColumnError,
    PanelObservation,
    balance_panel,
    detect_delimiter,
    load_beta,
    load_importance,
    load_panel,
    load_profiles,
    load_task_corpus,
    month_range,
    parse_period,
    write_rejects,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


TASKS = (
    "O*NET-SOC Code,Title,Task ID,Task\n"
    "43-9021.00,Data Entry Keyers,100,Read source documents and enter data.\n"
    "43-9021.00,Data Entry Keyers,101,Compile and sort data.\n"
    "35-9021.00,Dishwashers,200,Wash dishes by hand.\n"
)


def test_corpus_loads_and_joins_importance(tmp_path):
    tasks = write(tmp_path / "tasks.csv", TASKS)
    imp = write(tmp_path / "imp.csv", "onet_soc_code,task_id,importance\n43-9021.00,100,4.5\n35-9021.00,200,3\n")
    records, report = load_task_corpus(tasks, imp)
    by_key = {r.key: r for r in records}
    assert len(records) == 3
    assert by_key[("43-9021.00", 100)].importance == 4.5
    assert by_key[("43-9021.00", 101)].importance is None
    assert by_key[("35-9021.00", 200)].occupation_title == "Dishwashers"
    assert report.n_missing_importance == 1
    assert report.tasks.balanced()


def test_raw_onet_ratings_use_importance_scale_only(tmp_path):
    tasks = write(tmp_path / "tasks.txt",
                  "O*NET-SOC Code\tTitle\tTask ID\tTask\n"
                  "43-9021.00\tData Entry Keyers\t100\tRead source documents, then enter data.\n"
                  "43-9021.00\tData Entry Keyers\t101\tCompile and sort data.\n")
    ratings = write(tmp_path / "ratings.txt",
                    "O*NET-SOC Code\tTask ID\tScale ID\tCategory\tData Value\n"
                    "43-9021.00\t100\tIM\tn/a\t4.20\n"
                    "43-9021.00\t100\tRT\tn/a\t88.0\n"
                    "43-9021.00\t101\tIM\tn/a\t3.10\n")
    records, report = load_task_corpus(tasks, ratings)
    by_key = {r.key: r.importance for r in records}
    assert by_key[("43-9021.00", 100)] == 4.2
    assert by_key[("43-9021.00", 101)] == 3.1
    assert report.importance.n_skipped == 1
    assert report.importance.balanced()


def test_triplicated_row_collapses(tmp_path):
    row = "43-9021.00,Data Entry Keyers,100,Read source documents and enter data.\n"
    path = write(tmp_path / "t.csv", "onet_soc_code,title,task_id,task\n" + row * 3)
    records, report = load_task_corpus(path)
    assert len(records) == 1
    assert report.tasks.n_duplicates == 2
    assert report.tasks.balanced()


def test_importance_out_of_range_is_rejected_with_line(tmp_path):
    path = write(tmp_path / "t.csv", "onet_soc_code,title,task_id,task,importance\n"
                                     "43-9021.00,Keyers,1,Enter data.,6.0\n"
                                     "43-9021.00,Keyers,2,Check data.,2.0\n")
    records, report = load_task_corpus(path)
    assert [r.task_id for r in records] == [2]
    (rej,) = report.rejects
    assert rej.line == 2
    assert "[1,5]" in rej.reason


def test_conflicting_text_for_same_key_is_rejected(tmp_path):
    path = write(tmp_path / "t.csv", "onet_soc_code,title,task_id,task\n"
                                     "43-9021.00,Keyers,1,Enter data.\n"
                                     "43-9021.00,Keyers,1,Something else.\n")
    records, report = load_task_corpus(path)
    assert len(records) == 1 and len(report.rejects) == 1
    assert report.tasks.balanced()


def test_malformed_rows_are_reported_not_dropped(tmp_path):
    path = write(tmp_path / "t.csv", "onet_soc_code,title,task_id,task\n"
                                     "43-9021.00,Keyers,1,Enter data.\n"
                                     "43-9021.00,Keyers\n"
                                     "bad-code,Keyers,3,Text\n"
                                     "43-9021.00,Keyers,x,Text\n"
                                     "43-9021.00,Keyers,5,\n")
    records, report = load_task_corpus(path)
    assert len(records) == 1
    assert sorted(r.line for r in report.rejects) == [3, 4, 5, 6]
    out = tmp_path / "rejects.jsonl"
    assert write_rejects(out, report.rejects) == 4
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert {"source", "line", "reason", "row"} <= set(lines[0])


def test_missing_column_names_it(tmp_path):
    path = write(tmp_path / "t.csv", "onet_soc_code,title,task\n43-9021.00,Keyers,Enter\n")
    with pytest.raises(MissingColumnError, match="task_id"):
        load_task_corpus(path)


def test_loading_twice_is_idempotent(tmp_path):
    path = write(tmp_path / "t.csv", TASKS)
    a, _ = load_task_corpus(path)
    b, _ = load_task_corpus(path)
    assert sorted(a, key=lambda r: r.key) == sorted(b, key=lambda r: r.key)


def test_delimiter_detection():
    assert detect_delimiter("a\tb\tc") == "\t"
    assert detect_delimiter("a,b,c") == ","


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 8), st.sampled_from(["A", "B"]), st.booleans()), min_size=1, max_size=40))
def test_row_accounting_balances(tmp_path_factory, spec):
    lines = ["onet_soc_code,title,task_id,task,importance"]
    for tid, text, bad in spec:
        lines.append(f"15-1252.00,Devs,{tid},Task {text},{'9' if bad else '3'}")
    path = tmp_path_factory.mktemp("acct") / "t.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    records, report = load_task_corpus(path)
    assert len(records) + report.tasks.n_duplicates + len(report.tasks.rejects) == len(spec)
    assert len({r.key for r in records}) == len(records)


def test_beta_values(tmp_path, caplog):
    path = write(tmp_path / "b.csv", "onet_soc_code,task_id,beta\n"
                                     "15-1252.00,1,0.5\n15-1252.00,2,0.7\n15-1252.00,3,1\n15-1252.00,4,0\n")
    records, report = load_beta(path)
    assert {r.task_id: r.beta for r in records} == {1: 0.5, 3: 1.0, 4: 0.0}
    assert len(report.rejects) == 1 and report.rejects[0].line == 3
    empty = write(tmp_path / "e.csv", "")
    with caplog.at_level(logging.WARNING):
        records, _ = load_beta(empty)
    assert records == []
    assert any("empty" in r.message for r in caplog.records)


def test_profiles_log_salary_and_validate(tmp_path):
    path = write(tmp_path / "p.csv", "onet_soc_code,mean_salary,mean_seniority,employment,naics2\n"
                                     "15-1252.00,100000,2.5,1000,54\n"
                                     "15-1253.00,0,2.5,10,54\n"
                                     "15-1254.00,50000,8,10,\n")
    records, report = load_profiles(path)
    assert len(records) == 1
    assert records[0].mean_log_salary == pytest.approx(11.512925464970229)
    assert len(report.rejects) == 2


def test_panel_window_soc2_and_zero_openings(tmp_path):
    path = write(tmp_path / "panel.csv", "onet_soc_code,period,job_openings\n"
                                         "53-4031.00,2023-05,120\n"
                                         "53-4031.00,2019-01,10\n"
                                         "53-4031.00,2023-06,0\n"
                                         "53-4031.00,May 2023,5\n")
    obs, report = load_panel(path, ("2021-09", "2025-11"))
    assert obs == [PanelObservation("53-4031.00", "2023-05", 120)]
    assert obs[0].soc2 == "53"
    assert report.notes["outside_window"] == 1
    assert report.notes["nonpositive"] == [["53-4031.00", "2023-06"]]
    assert len(report.rejects) == 1 and "period" in report.rejects[0].reason
    assert report.balanced()


def test_balanced_panel_size():
    periods = month_range("2021-09", "2025-11")
    assert len(periods) == 51
    obs = [PanelObservation(f"11-{1000 + i:04d}.00", p, 10) for i in range(867) for p in periods]
    obs += [PanelObservation("99-0000.00", p, 10) for p in periods[:-1]]
    kept, dropped = balance_panel(obs, periods)
    assert len(kept) == 44_217
    assert dropped == ["99-0000.00"]


def test_parse_period():
    assert parse_period("2023/5") == "2023-05"
    assert parse_period("2023-05-01") == "2023-05"
    with pytest.raises(ValueError):
        parse_period("2023-13")


def test_importance_file_rejects(tmp_path):
    path = write(tmp_path / "i.csv", "onet_soc_code,task_id,importance\n15-1252.00,1,0.5\n15-1252.00,2,2\n")
    ratings, report = load_importance(path)
    assert ratings == {("15-1252.00", 2): 2.0}
    assert len(report.rejects) == 1
