"""Тесты командной строки open-krotov: режимы, коды завершения, воспроизводимость."""

import json
from pathlib import Path

import numpy as np
import pytest

from open_krotov import main as cli
from open_krotov.config import ExperimentConfig
from open_krotov.errors import (
    EXIT_CONFIG_PARSE,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    MonotonicityError,
)
from open_krotov.results import CONVERGENCE_FILE, RESULT_FILE, TRAJECTORY_FILE

from .conftest import GAD_T_FREE

# ============================================================================
# Фикстуры
# ============================================================================


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """Запуск в пустом каталоге: без .env, лог во временный файл."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv('OPEN_KROTOV_LOG_FILE', str(tmp_path / 'logs' / 'run.log'))
    return tmp_path


def _config_file(directory: Path, data: dict, name: str = 'experiment.json') -> Path:
    path = directory / name
    path.write_text(json.dumps(data), encoding='utf-8')
    return path


def _read_result(directory: Path) -> dict:
    return json.loads((directory / RESULT_FILE).read_text(encoding='utf-8'))


# ============================================================================
# Режимы
# ============================================================================


class TestModes:
    def test_qsl_reference(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        config = _config_file(tmp_path, {'preset': 'qsl-reference'})
        out = tmp_path / 'qsl'
        assert cli.main(['run', str(config), '--output-dir', str(out)]) == EXIT_OK
        scalars = _read_result(out)['scalars']
        assert scalars['t_qsl'] == pytest.approx(np.pi / 2, abs=1e-10)
        assert 't_QSL' in capsys.readouterr().out

    def test_free_time(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        config = _config_file(tmp_path, {'preset': 'gad-qubit'})
        out = tmp_path / 'free'
        assert cli.main(['free-time', str(config), '--output-dir', str(out)]) == EXIT_OK
        printed = capsys.readouterr().out
        assert 'T_free (closed form)' in printed
        assert 'not reproduced' in printed
        document = _read_result(out)
        assert document['mode'] == 'free-time'
        scalars = document['scalars']
        assert scalars['t_free_closed_form'] == pytest.approx(GAD_T_FREE, abs=1e-5)
        assert scalars['relative_difference'] <= 1e-4
        assert document['metadata']['seed'] == 0

    def test_open_optimization_files(self, tmp_path: Path):
        config = _config_file(
            tmp_path,
            {
                'preset': 'gad-qubit',
                'mode': 'open-optimize',
                'grid': {'t_final': 1.0, 'n_steps': 100},
                'optimizer': {'k_max': 3},
                'output': {'decomposition': True},
            },
        )
        out = tmp_path / 'open'
        code = cli.main(['run', str(config), '--output-dir', str(out), '--xlsx', '--seed', '5'])
        assert code == EXIT_OK
        assert sorted(p.name for p in out.iterdir()) == [
            'convergence.csv',
            'decomposition.csv',
            'result.json',
            'results.xlsx',
            'trajectory.csv',
        ]
        convergence = np.loadtxt(out / CONVERGENCE_FILE, delimiter=',', skiprows=1)
        assert convergence.shape == (4, 5)
        assert np.all(np.diff(convergence[:, 1]) >= -1e-12)
        trajectory = np.loadtxt(out / TRAJECTORY_FILE, delimiter=',', skiprows=1)
        assert trajectory.shape == (101, 4)
        document = _read_result(out)
        assert document['metadata']['seed'] == 5
        assert ExperimentConfig.model_validate(document['config']).optimizer.seed == 5

    def test_named_preset_without_file(self, tmp_path: Path):
        out = tmp_path / 'preset'
        code = cli.main(
            [
                'run',
                '--preset',
                'paper-fig3',
                '--override',
                'grid.n_steps=100',
                '--override',
                'optimizer.k_max=2',
                '--override',
                'optimizer.delta_tol=0',
                '--output-dir',
                str(out),
            ],
        )
        assert code == EXIT_OK
        convergence = (out / CONVERGENCE_FILE).read_text(encoding='utf-8').splitlines()
        trajectory = (out / TRAJECTORY_FILE).read_text(encoding='utf-8').splitlines()
        assert convergence[0] == 'k,J,fidelity,fluence,delta_J'
        assert len(convergence) == 4
        assert trajectory[0] == 't,D1_free,D1_controlled,xi'
        assert len(trajectory) == 102
        document = _read_result(out)
        assert document['mode'] == 'thermal-speedup'
        assert document['config']['preset'] == 'paper-fig3'
        assert document['scalars']['t_free'] == pytest.approx(GAD_T_FREE, abs=1e-5)

    def test_free_time_from_preset(self, tmp_path: Path):
        out = tmp_path / 'free'
        assert cli.main(['free-time', '--preset', 'gad-qubit', '--output-dir', str(out)]) == EXIT_OK
        scalars = _read_result(out)['scalars']
        assert scalars['t_free_closed_form'] == pytest.approx(GAD_T_FREE, abs=1e-5)

    def test_initial_state_inside_ball(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        out = tmp_path / 'inside'
        code = cli.main(
            [
                'run',
                '--preset',
                'gad-speedup',
                '--override',
                'epsilon=0.3',
                '--output-dir',
                str(out),
            ],
        )
        assert code == EXIT_OK
        assert 'already within epsilon=0.3' in capsys.readouterr().out
        assert sorted(p.name for p in out.iterdir()) == ['result.json']
        scalars = _read_result(out)['scalars']
        assert scalars['reached'] is True
        assert scalars['iterations'] == 0
        assert scalars['t_final'] == 0.0

    def test_output_directory_from_settings(

        self,
        tmp_path: Path,
        monkeypatch: pytest.MonkeyPatch,
    ):
        monkeypatch.setenv('OPEN_KROTOV_OUTPUT_DIR', str(tmp_path / 'from_env'))
        config = _config_file(tmp_path, {'preset': 'qsl-reference'})
        assert cli.main(['run', str(config)]) == EXIT_OK
        assert (tmp_path / 'from_env' / RESULT_FILE).is_file()


# ============================================================================
# Коды завершения
# ============================================================================


class TestExitCodes:
    def test_invalid_parameter(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        config = _config_file(tmp_path, {'preset': 'qubit-flip'})
        code = cli.main(['run', str(config), '--override', 'optimizer.delta=3'])
        assert code == EXIT_VALIDATION
        assert '[0, 2]' in capsys.readouterr().err

    def test_malformed_json(self, tmp_path: Path):
        config = tmp_path / 'broken.json'
        config.write_text('{"preset": ', encoding='utf-8')
        assert cli.main(['run', str(config)]) == EXIT_CONFIG_PARSE

    def test_missing_config(self, tmp_path: Path):
        assert cli.main(['run', str(tmp_path / 'absent.json')]) == EXIT_CONFIG_PARSE

    def test_neither_file_nor_preset(self, capsys: pytest.CaptureFixture[str]):
        assert cli.main(['run']) == EXIT_CONFIG_PARSE
        assert '--preset' in capsys.readouterr().err

    def test_unknown_preset_option(self):
        assert cli.main(['run', '--preset', 'fig9']) == EXIT_VALIDATION

    def test_invalid_environment(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
        monkeypatch.setenv('OPEN_KROTOV_LOG_LEVEL', 'LOUD')
        config = _config_file(tmp_path, {'preset': 'qsl-reference'})
        assert cli.main(['run', str(config)]) == EXIT_VALIDATION

    def test_runtime_abort(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
        def failing_dispatch(config: ExperimentConfig, *, show_progress: bool):
            raise MonotonicityError(2, 0.5, 0.4)

        monkeypatch.setattr(cli, '_dispatch', failing_dispatch)
        config = _config_file(tmp_path, {'preset': 'qsl-reference'})
        assert cli.main(['run', str(config)]) == EXIT_RUNTIME

    def test_unexpected_error(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
        def failing_dispatch(config: ExperimentConfig, *, show_progress: bool):
            raise KeyError('boom')

        monkeypatch.setattr(cli, '_dispatch', failing_dispatch)
        config = _config_file(tmp_path, {'preset': 'qsl-reference'})
        assert cli.main(['run', str(config)]) == EXIT_RUNTIME


# ============================================================================
# Воспроизводимость и справка
# ============================================================================


def test_identical_runs_write_identical_tables(tmp_path: Path):
    """Два запуска с одинаковыми конфигурацией и seed дают побайтно равные CSV."""
    config = _config_file(
        tmp_path,
        {
            'preset': 'gad-qubit',
            'mode': 'open-optimize',
            'grid': {'t_final': 1.0, 'n_steps': 100},
            'optimizer': {'k_max': 3, 'seed': 11},
        },
    )
    for name in ('first', 'second'):
        assert cli.main(['run', str(config), '--output-dir', str(tmp_path / name)]) == EXIT_OK
    for file_name in (CONVERGENCE_FILE, TRAJECTORY_FILE):
        first = (tmp_path / 'first' / file_name).read_bytes()
        second = (tmp_path / 'second' / file_name).read_bytes()
        assert first == second


def test_version(capsys: pytest.CaptureFixture[str]):
    with pytest.raises(SystemExit) as exc_info:
        cli.main(['--version'])
    assert exc_info.value.code == 0
    assert 'open-krotov' in capsys.readouterr().out


def test_help_lists_output_columns(capsys: pytest.CaptureFixture[str]):
    with pytest.raises(SystemExit):
        cli.main(['run', '--help'])
    printed = capsys.readouterr().out
    assert 'D1_free, D1_controlled' in printed
    assert 'exit codes' in printed
