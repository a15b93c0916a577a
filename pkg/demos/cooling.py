"""Feedback cooling as an experimenter would measure it.

Each scenario is simulated, its Welch spectrum fitted with the damping held
at the feedback-off value, and the fitted band area turned into a
temperature.  Integer delays cool best; missing the integer by a tenth of a
period costs a large part of the cooling.
"""
import tempfile

from levkit.orchestration import ExperimentConfig, run

cfg = ExperimentConfig.load("cooling", output_dir=tempfile.mkdtemp())
summary = run(cfg)
print(f"fs {summary['fs']:.1f} Hz, Welch segment {summary['nperseg']} samples")
for r in summary["rows"]:
    print(f"{r['label']:7s} T_eff {r['T_eff']:7.2f} K  (theory {r['T_eff_theory']:7.2f} K)")
print(f"files in {cfg.directory}")
