"""Versioned JSON run configuration with every default embedded."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .carleman import CarlemanParams, default_shift
from .forward_solver import SolverConfig
from .grid import SpaceTimeGrid
from .mfg_model import ElasticitySpec, InteractionSpec, KernelSpec, MfgProblem, slice_from_spec


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSection(_Section):
    n_dim: Literal[1, 2] = 1
    nx: int | list[int] = 201
    nt: int = 401
    T: float = Field(0.3, gt=0)
    lengths: float | list[float] = 1.0

    def build(self) -> SpaceTimeGrid:
        return SpaceTimeGrid.make(self.nx, self.nt, self.T, self.lengths, self.n_dim)


class ElasticitySection(_Section):
    kind: Literal["constant", "smooth"] = "smooth"
    c0: float = 0.5
    c1: float = 0.2


class KernelSection(_Section):
    kind: Literal["gaussian", "constant", "zero"] = "gaussian"
    amplitude: float = 1.0
    width: float = Field(0.2, gt=0)


class InteractionSection(_Section):
    kind: Literal["linear", "saturating", "zero"] = "linear"
    gamma1: float = 0.1
    gamma2: float = 0.1


class DataSection(_Section):
    u_T: str | float = "0.5*cos(pi*x)"
    p_0: str | float = "1 + 0.5*cos(pi*x)"


class ProblemSection(_Section):
    beta: float = Field(0.1, gt=0)
    elasticity: ElasticitySection = ElasticitySection()
    kernel: KernelSection = KernelSection()
    interaction: InteractionSection = InteractionSection()
    data: DataSection = DataSection()
    N3: float = Field(10.0, gt=0)
    N4: float = Field(10.0, gt=0)


class CorpusSection(_Section):
    count: int = Field(100, ge=1)
    decay: float = Field(2.0, gt=0)
    modes: int = Field(6, ge=1)
    zero_initial: bool = False


class CarlemanSection(_Section):
    a: float | None = None
    lambdas: list[float] = [2.5, 3.0, 4.0, 6.0, 8.0]
    include_lam0: bool = True
    mode: Literal["corrected", "literal_paper"] = "corrected"
    quasi_lambdas: list[float] = [3.0, 4.0, 6.0]
    quasi_pairs: int = Field(100, ge=1)
    quasi_spread_max: float = Field(20.0, gt=1)
    identity_members: int = Field(10, ge=1)
    identity_levels: int = Field(4, ge=2)
    identity_base_nx: int = Field(51, ge=8)
    identity_base_nt: int = Field(101, ge=8)
    identity_lambda: float = Field(3.0, ge=2)
    identity_order_min: float = 1.8
    audit_T: list[float] = [0.05, 0.3, 1.0, 2.0, 10.0]

    @field_validator("a")
    @classmethod
    def _shift(cls, v):
        if v is not None and not v > 2:
            raise ValueError("shift a must exceed 2")
        return v

    @field_validator("lambdas", "quasi_lambdas")
    @classmethod
    def _lams(cls, v):
        if not v or min(v) < 2:
            raise ValueError("lambda values must be >= 2")
        return v

    @field_validator("audit_T")
    @classmethod
    def _horizons(cls, v):
        if not v or min(v) <= 0:
            raise ValueError("audit horizons must be positive")
        return v


class SolverSection(_Section):
    omega: float = Field(0.5, gt=0, le=1)
    picard_tol: float = Field(1e-8, gt=0)
    max_picard: int = Field(200, ge=1)
    noise_level: float = Field(0.0, ge=0)
    initial_p: Literal["data", "uniform"] = "data"

    def build(self, seed: int) -> SolverConfig:
        return SolverConfig(omega=self.omega, picard_tol=self.picard_tol, max_picard=self.max_picard,
                            noise_level=self.noise_level, seed=seed, initial_p=self.initial_p)


class ExperimentSection(_Section):
    deltas: list[float] = [1e-1, 1e-2, 1e-3, 1e-4]
    seeds: list[int] = [0, 1, 2]
    targets: list[Literal["u_T", "p_0"]] = ["u_T", "p_0"]
    slope_band: float = Field(0.15, gt=0)
    ratio_bound: float = Field(10.0, gt=1)

    @field_validator("deltas")
    @classmethod
    def _deltas(cls, v):
        if len(v) < 3 or min(v) <= 0:
            raise ValueError("need at least 3 positive perturbation amplitudes")
        if max(v) / min(v) < 100 * (1 - 1e-12):
            raise ValueError("perturbation amplitudes must span at least two decades")
        return v


class RunConfig(_Section):
    version: Literal[1] = 1
    grid: GridSection = GridSection()
    problem: ProblemSection = ProblemSection()
    corpus: CorpusSection = CorpusSection()
    carleman: CarlemanSection = CarlemanSection()
    solver: SolverSection = SolverSection()
    experiment: ExperimentSection = ExperimentSection()
    output_dir: str = "out"
    seed: int = 0
    jobs: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _cross(self):
        # fail before any compute: grid, shift and data all have to be constructible
        grid = self.grid.build()
        self.build_problem(grid)
        self.carleman_params()
        return self

    # -- builders ---------------------------------------------------------

    def build_grid(self) -> SpaceTimeGrid:
        return self.grid.build()

    def build_problem(self, grid: SpaceTimeGrid | None = None, base_dir: str | Path | None = None) -> MfgProblem:
        grid = grid or self.build_grid()
        pr = self.problem
        return MfgProblem.build(
            grid, pr.beta,
            slice_from_spec(pr.data.u_T, grid, base_dir),
            slice_from_spec(pr.data.p_0, grid, base_dir),
            elasticity=ElasticitySpec(**pr.elasticity.model_dump()),
            kernel=KernelSpec(**pr.kernel.model_dump()),
            interaction=InteractionSpec(**pr.interaction.model_dump()),
            N3=pr.N3, N4=pr.N4)

    def carleman_params(self, lam: float | None = None) -> CarlemanParams:
        T = self.grid.T
        a = default_shift(T) if self.carleman.a is None else self.carleman.a
        lam0 = 16.0 * (T + a) ** 2
        return CarlemanParams(T, a, lam0 if lam is None else lam)

    def identity_grid(self) -> SpaceTimeGrid:
        g = self.grid
        return SpaceTimeGrid.make(self.carleman.identity_base_nx, self.carleman.identity_base_nt, g.T,
                                  g.lengths, g.n_dim)

    def solver_config(self) -> SolverConfig:
        return self.solver.build(self.seed)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        raw = json.load(fh)
    return RunConfig.model_validate(raw)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=False) + "\n"
