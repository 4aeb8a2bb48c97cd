"""Tabular solvers and benchmarks for two-player zero-sum preference games."""

from .games import (
    GameGenSpec,
    GameValidationError,
    PreferenceGame,
    duality_gap,
    game_value,
    kl_divergence,
    make_game,
    point_mass,
    uniform_policy,
    validate_game,
    validate_policy,
    win_rate_vector,
)
from .optim import FitConfig, FitError
from .solvers import (
    RunLog,
    SolverConfig,
    average_policy,
    kl_diameter,
    md_step,
    nash_md_run,
    omd_selfplay,
    online_ipo_run,
    onpo_run,
    regret_against,
    run_solver,
    sppo_run,
    theorem_gap_bound,
)
from .stochastic import (
    PreferenceDataset,
    PreferencePair,
    build_dataset,
    estimate_win_rate,
    fit_policy,
    make_rng,
    onpo_stochastic_run,
    oracle_label,
    pair_loss,
)
from .cmdp import (
    TabularCMDP,
    exploitability,
    final_state_distribution,
    make_cmdp,
    per_state_update,
    q_values,
    run_cmdp_selfplay,
    terminal_pref_vs_policy,
    uniform_state_policy,
)
from .bench import ExperimentConfig, RateFit, fit_rate, run_experiment, sweep_eta

__version__ = "0.1.0"
