"""Phenomenological optical-physics layer.

Deterministic expected-value formulas for loss, Raman noise under
quantum/classical coexistence, pair-detection statistics (singles,
coincidences, accidentals, CAR), two-photon fringe and HOM interference,
clock-jitter photon misidentification, and teleportation rate/fidelity.
The simulator draws Poisson samples around these means; everything here
is pure and reentrant.

Named parameter presets live in ``qnetsim/profiles/`` and are loaded with
:func:`load_profile`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import yaml

CAR_INFINITE = math.inf


@dataclass
class ChannelPhysics:
    """Optical state of one configured path, as seen by a receiver."""

    loss_db: float = 0.0
    raman_coeff: float = 0.0  # counts/s per mW per GHz at the receiver
    polarization_offset_rad: float = 0.0
    delay_offset_ps: float = 0.0
    filter_bandwidth_ghz: float = 100.0
    coincidence_window_ns: float = 0.5
    classical_launch_dbm: float | None = None  # co-propagating classical power

    def __post_init__(self):
        if self.loss_db < 0:
            raise ValueError("loss_db must be >= 0")
        if self.filter_bandwidth_ghz <= 0 or self.coincidence_window_ns <= 0:
            raise ValueError("filter bandwidth and coincidence window must be > 0")


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.8
    dark_rate_cps: float = 0.0
    jitter_ps: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if self.dark_rate_cps < 0 or self.jitter_ps < 0:
            raise ValueError("rates and jitter must be >= 0")


@dataclass(frozen=True)
class EPSParams:
    pair_rate_cps: float
    indistinguishability: float = 1.0
    coherence_time_ps: float = 50.0

    def __post_init__(self):
        if self.pair_rate_cps < 0:
            raise ValueError("pair_rate_cps must be >= 0")
        if not 0.0 <= self.indistinguishability <= 1.0:
            raise ValueError("indistinguishability must be in [0, 1]")
        if self.coherence_time_ps <= 0:
            raise ValueError("coherence_time_ps must be > 0")


@dataclass(frozen=True)
class ClockParams:
    clock_rate_hz: float = 9.0e7
    sync_jitter_ps: float = 5.0

    def __post_init__(self):
        if self.clock_rate_hz <= 0:
            raise ValueError("clock_rate_hz must be > 0")
        if self.sync_jitter_ps < 0:
            raise ValueError("sync_jitter_ps must be >= 0")


@dataclass(frozen=True)
class DetectionStats:
    singles_a: float
    singles_b: float
    true_coinc: float
    accidentals: float
    car: float


def transmittance(loss_db: float) -> float:
    """Power transmission probability of a lossy path: 10^(-loss/10)."""
    if loss_db < 0:
        raise ValueError("loss_db must be >= 0")
    return 10.0 ** (-loss_db / 10.0)


def dbm_to_mw(power_dbm: float | None) -> float:
    if power_dbm is None or power_dbm == -math.inf:
        return 0.0
    return 10.0 ** (power_dbm / 10.0)


def raman_noise_rate(launch_power_dbm: float | None, channel: ChannelPhysics) -> float:
    """Raman-scattering background at the quantum receiver.

    Strictly linear in classical launch power (mW) and in the receiver's
    filter bandwidth, so halving the bandwidth halves the rate exactly.
    """
    return channel.raman_coeff * dbm_to_mw(launch_power_dbm) * channel.filter_bandwidth_ghz


def detection_statistics(eps: EPSParams,
                         leg_a: ChannelPhysics, leg_b: ChannelPhysics,
                         det_a: DetectorParams, det_b: DetectorParams,
                         launch_dbm_a: float | None = None,
                         launch_dbm_b: float | None = None) -> DetectionStats:
    """Expected singles, coincidences, accidentals, and CAR for one pair source.

    Launch powers default to each leg's configured co-propagating power.
    With zero accidentals the CAR is reported as the +inf sentinel.
    """
    if launch_dbm_a is None:
        launch_dbm_a = leg_a.classical_launch_dbm
    if launch_dbm_b is None:
        launch_dbm_b = leg_b.classical_launch_dbm
    t_a = transmittance(leg_a.loss_db) * det_a.efficiency
    t_b = transmittance(leg_b.loss_db) * det_b.efficiency
    singles_a = eps.pair_rate_cps * t_a + raman_noise_rate(launch_dbm_a, leg_a) + det_a.dark_rate_cps
    singles_b = eps.pair_rate_cps * t_b + raman_noise_rate(launch_dbm_b, leg_b) + det_b.dark_rate_cps
    true_coinc = eps.pair_rate_cps * t_a * t_b
    window_s = leg_a.coincidence_window_ns * 1e-9
    accidentals = singles_a * singles_b * window_s
    car = (true_coinc + accidentals) / accidentals if accidentals > 0 else CAR_INFINITE
    return DetectionStats(singles_a, singles_b, true_coinc, accidentals, car)


def fringe_coincidences(relative_hwp_angle_rad: float, max_coinc: float,
                        visibility: float) -> float:
    """Two-photon polarization fringe vs relative half-wave-plate angle.

    Normalized so C(0) = max_coinc and (Cmax-Cmin)/(Cmax+Cmin) = visibility.
    """
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must be in [0, 1]")
    theta = relative_hwp_angle_rad
    return max_coinc * (1.0 - visibility + 2.0 * visibility * math.cos(2.0 * theta) ** 2) / (1.0 + visibility)


def visibility_from_noise(stats: DetectionStats, intrinsic_visibility: float) -> float:
    """Effective fringe visibility after accidental-coincidence dilution."""
    denom = stats.true_coinc + stats.accidentals
    if denom <= 0:
        return intrinsic_visibility
    return intrinsic_visibility * stats.true_coinc / denom


def hom_coincidences(relative_delay_ps: float, baseline_coinc: float,
                     hom_visibility: float, coherence_time_ps: float) -> float:
    """Hong-Ou-Mandel dip: Gaussian coincidence suppression around zero delay."""
    if not 0.0 <= hom_visibility <= 1.0:
        raise ValueError("hom_visibility must be in [0, 1]")
    if coherence_time_ps <= 0:
        raise ValueError("coherence_time_ps must be > 0")
    dip = hom_visibility * math.exp(-((relative_delay_ps / coherence_time_ps) ** 2))
    return baseline_coinc * (1.0 - dip)


def polarization_error(offset_rad: float) -> float:
    """Visibility multiplier for a polarization misalignment angle."""
    return math.cos(offset_rad) ** 2


def clock_misidentification_probability(clock: ClockParams,
                                        detector_jitter_ps: float = 0.0) -> float:
    """Probability that timing error exceeds half the clock bin separation.

    Gaussian two-sided tail with sigma = sync jitter combined in quadrature
    with detector jitter when supplied.
    """
    sigma_ps = math.hypot(clock.sync_jitter_ps, detector_jitter_ps)
    if sigma_ps == 0.0:
        return 0.0
    half_bin_ps = 0.5e12 / clock.clock_rate_hz
    return math.erfc(half_bin_ps / (sigma_ps * math.sqrt(2.0)))


@dataclass(frozen=True)
class TeleportationEstimate:
    rate_hz: float
    fidelity_avg: float


def teleportation_estimate(eps: EPSParams,
                           legs: Sequence[ChannelPhysics],
                           detectors: Sequence[DetectorParams],
                           clock: ClockParams,
                           bsm_success_prob: float = 0.5) -> TeleportationEstimate:
    """Teleportation rate and average fidelity for a qubit/idler/output arm set.

    legs[0] carries the input qubit to the BSM, legs[1] the source idler to
    the BSM, legs[2:] any downstream arms of the teleported photon.  Rate is
    the clock rate derated by pair probability per clock, every arm's
    transmittance and detector efficiency, and the BSM success probability.
    Fidelity is affine between the 1/2 random floor and the
    indistinguishability ceiling (2 + I)/3, scaled by the signal fraction of
    coincidences at the BSM.
    """
    if not 0.0 < bsm_success_prob <= 0.5:
        raise ValueError("bsm_success_prob must be in (0, 0.5]")
    if len(legs) < 2 or len(legs) != len(detectors):
        raise ValueError("need >= 2 legs and one detector per leg")

    pair_prob_per_clock = eps.pair_rate_cps / clock.clock_rate_hz
    rate_hz = clock.clock_rate_hz * pair_prob_per_clock * bsm_success_prob
    for leg, det in zip(legs, detectors):
        rate_hz *= transmittance(leg.loss_db) * det.efficiency

    # Accidentals at the BSM count only noise randoms (Raman, darks); randoms
    # of the pair stream itself stand in for multi-pair effects, which are
    # folded into the indistinguishability parameter instead.  This keeps the
    # zero-noise limit exact: no noise means signal fraction 1.
    signal = [eps.pair_rate_cps * transmittance(leg.loss_db) * det.efficiency
              for leg, det in zip(legs[:2], detectors[:2])]
    noise = [raman_noise_rate(leg.classical_launch_dbm, leg) + det.dark_rate_cps
             for leg, det in zip(legs[:2], detectors[:2])]
    window_s = legs[0].coincidence_window_ns * 1e-9
    accidentals = (signal[0] * noise[1] + noise[0] * signal[1] + noise[0] * noise[1]) * window_s
    true_coinc = signal[0] * signal[1]
    denom = true_coinc + accidentals
    signal_fraction = true_coinc / denom if denom > 0 else 1.0
    worst_jitter = max(d.jitter_ps for d in detectors)
    signal_fraction *= 1.0 - clock_misidentification_probability(clock, worst_jitter)

    relative_delay = legs[0].delay_offset_ps - legs[1].delay_offset_ps
    indist = eps.indistinguishability * math.exp(-((relative_delay / eps.coherence_time_ps) ** 2))
    f_max = (2.0 + indist) / 3.0
    fidelity = f_max * signal_fraction + (1.0 - signal_fraction) / 2.0
    return TeleportationEstimate(rate_hz=rate_hz, fidelity_avg=fidelity)


# -- parameter profiles --------------------------------------------------------


@dataclass(frozen=True)
class PhysicsProfile:
    """A named, self-contained parameter set for one deployment scenario."""

    name: str
    eps: EPSParams
    intrinsic_visibility: float
    legs: dict[str, ChannelPhysics] = field(default_factory=dict)
    detectors: dict[str, DetectorParams] = field(default_factory=dict)
    clock: ClockParams = field(default_factory=ClockParams)
    bsm_success_prob: float = 0.5

    def leg_pair(self) -> tuple[ChannelPhysics, ChannelPhysics]:
        """The (signal, idler) legs of a two-arm distribution profile."""
        return self.legs["signal"], self.legs["idler"]

    def detector_pair(self) -> tuple[DetectorParams, DetectorParams]:
        return self.detectors["signal"], self.detectors["idler"]


def _leg_from_doc(doc: dict) -> ChannelPhysics:
    doc = dict(doc)
    loss = float(doc.pop("loss_db", 0.0))
    length = doc.pop("length_km", None)
    atten = doc.pop("attenuation_db_per_km", None)
    if length is not None and atten is not None:
        loss += float(length) * float(atten)
    launch = doc.pop("classical_launch_dbm", None)
    return ChannelPhysics(
        loss_db=loss,
        raman_coeff=float(doc.pop("raman_coeff", 0.0)),
        polarization_offset_rad=float(doc.pop("polarization_offset_rad", 0.0)),
        delay_offset_ps=float(doc.pop("delay_offset_ps", 0.0)),
        filter_bandwidth_ghz=float(doc.pop("filter_bandwidth_ghz", 100.0)),
        coincidence_window_ns=float(doc.pop("coincidence_window_ns", 0.5)),
        classical_launch_dbm=None if launch is None else float(launch),
    )


def profile_from_doc(doc: dict) -> PhysicsProfile:
    eps_doc = doc.get("eps", {})
    detectors = {
        name: DetectorParams(
            efficiency=float(d.get("efficiency", 0.8)),
            dark_rate_cps=float(d.get("dark_rate_cps", 0.0)),
            jitter_ps=float(d.get("jitter_ps", 0.0)),
        )
        for name, d in (doc.get("detectors", {}) or {}).items()
    }
    clock_doc = doc.get("clock", {}) or {}
    return PhysicsProfile(
        name=str(doc.get("name", "unnamed")),
        eps=EPSParams(
            pair_rate_cps=float(eps_doc.get("pair_rate_cps", 0.0)),
            indistinguishability=float(eps_doc.get("indistinguishability", 1.0)),
            coherence_time_ps=float(eps_doc.get("coherence_time_ps", 50.0)),
        ),
        intrinsic_visibility=float(doc.get("intrinsic_visibility", 1.0)),
        legs={name: _leg_from_doc(d) for name, d in (doc.get("legs", {}) or {}).items()},
        detectors=detectors,
        clock=ClockParams(
            clock_rate_hz=float(clock_doc.get("clock_rate_hz", 9.0e7)),
            sync_jitter_ps=float(clock_doc.get("sync_jitter_ps", 5.0)),
        ),
        bsm_success_prob=float(doc.get("bsm_success_prob", 0.5)),
    )


def load_profile(name_or_path: str) -> PhysicsProfile:
    """Load a shipped preset by name, or any profile document by path."""
    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") and path.exists():
        text = path.read_text()
    else:
        ref = resources.files("qnetsim").joinpath(f"profiles/{name_or_path}.yaml")
        if not ref.is_file():
            raise FileNotFoundError(f"no shipped profile or file named {name_or_path!r}")
        text = ref.read_text()
    return profile_from_doc(yaml.safe_load(text))


def fit_raman_coeff(profile: PhysicsProfile, target_veff: float,
                    at_power_dbm: float) -> float:
    """Solve for the signal-leg Raman coefficient hitting a visibility operating point.

    Inverts the accidental-coincidence dilution at the given classical launch
    power; used once per deployment to pin the coefficient, after which it is
    a constant of the profile.
    """
    leg_a, leg_b = profile.leg_pair()
    det_a, det_b = profile.detector_pair()
    if not 0 < target_veff < profile.intrinsic_visibility:
        raise ValueError("target visibility must be below the intrinsic visibility")
    t_a = transmittance(leg_a.loss_db) * det_a.efficiency
    t_b = transmittance(leg_b.loss_db) * det_b.efficiency
    rate = profile.eps.pair_rate_cps
    true_coinc = rate * t_a * t_b
    singles_b = rate * t_b + raman_noise_rate(leg_b.classical_launch_dbm, leg_b) + det_b.dark_rate_cps
    window_s = leg_a.coincidence_window_ns * 1e-9

    noise_fraction = target_veff / profile.intrinsic_visibility
    accidentals_needed = true_coinc * (1.0 - noise_fraction) / noise_fraction
    singles_a_needed = accidentals_needed / (singles_b * window_s)
    raman_needed = singles_a_needed - rate * t_a - det_a.dark_rate_cps
    if raman_needed <= 0:
        raise ValueError("operating point already below target without Raman noise")
    return raman_needed / (dbm_to_mw(at_power_dbm) * leg_a.filter_bandwidth_ghz)
