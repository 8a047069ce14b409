import pytest

from fedpeft.chart import ChartError, chart_from_csv
from fedpeft.cli import EXIT_DOMAIN, EXIT_OK, main
from fedpeft.evaluation import table_csv

ROWS = [
    {"model": "desk", "peft": p, "single": s, "centralized": c, "federated": f}
    for p, s, c, f in (("lora", 0.7, 0.9, 0.85), ("qlora", 0.68, 0.88, 0.86), ("ia3", 0.5, 0.6, 0.55))
]


def test_three_rows_three_groups():
    svg = chart_from_csv(table_csv(ROWS))
    assert svg.count('<g class="group"') == 3
    assert svg.count("<rect") == 3 * 3 + 3  # bars plus legend swatches
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_output_is_deterministic():
    assert chart_from_csv(table_csv(ROWS)) == chart_from_csv(table_csv(ROWS))


@pytest.mark.parametrize("text", [
    "", "model,peft,single,centralized,federated\n", "peft,single\nlora,0.5\n",
    "peft,single,centralized,federated\nlora,x,0.5,0.5\n", "peft,single,centralized,federated\nlora,1.5,0.5,0.5\n",
])
def test_malformed_csv(text):
    with pytest.raises(ChartError):
        chart_from_csv(text)


def test_cli_chart_writes_next_to_csv(tmp_path, capsys):
    src = tmp_path / "comparison.csv"
    src.write_text(table_csv(ROWS))
    assert main(["chart", str(src)]) == EXIT_OK
    first = (tmp_path / "chart.svg").read_bytes()
    assert capsys.readouterr().out.strip() == str(tmp_path / "chart.svg")
    assert main(["chart", str(src), "--out", str(tmp_path / "o"), "--name", "c.svg"]) == EXIT_OK
    assert (tmp_path / "o" / "c.svg").read_bytes() == first


def test_cli_chart_empty_csv_writes_nothing(tmp_path, capsys):
    src = tmp_path / "empty.csv"
    src.write_text("")
    assert main(["chart", str(src)]) == EXIT_DOMAIN
    assert not (tmp_path / "chart.svg").exists()
    assert main(["chart", str(tmp_path / "absent.csv")]) == EXIT_DOMAIN
