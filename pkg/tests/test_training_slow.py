from pathlib import Path

import pytest

from pkcam.services.config import RunConfig
from pkcam.services.trainer import METRICS_CSV
from pkcam.services.trainer import Trainer


@pytest.mark.slow
def test_desk_scale_pkcam_run_learns_the_synthetic_set(
    fixtures_dir: Path, tmp_path: Path
) -> None:
    config = RunConfig.load(fixtures_dir / "configs" / "desk_scale.cfg")
    result = Trainer(config, tmp_path / "first").run()
    assert result.record.top1 >= 0.9

    Trainer(config, tmp_path / "second").run()
    first = (tmp_path / "first" / METRICS_CSV).read_bytes()
    assert first == (tmp_path / "second" / METRICS_CSV).read_bytes()
