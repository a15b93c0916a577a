"""How much delay the feedback band-pass adds on its own.

A 1001-tap linear-phase filter at 1250 Hz delays every frequency by 500
samples, which is 7.6 periods of a 19 Hz oscillator: the feedback loop can
never be faster than that.
"""
import numpy as np

from levkit.signal import design_bandpass, gain_db, group_delay_periods, measure_delay_periods

from _plot import figure

filt = design_bandpass(1001, 1250.0, 18.0, 23.0)
print(f"taps {filt.n}, sum of taps {filt.dc_gain:.1e}")
for f in (16.2, 20.5, 25.0):
    print(f"gain at {f:5.1f} Hz: {gain_db(filt, f)[0]:7.2f} dB")
print(f"delay at 19 Hz: {group_delay_periods(filt, 19.0)} periods (formula)")
print(f"delay of an 18.9 Hz burst: {measure_delay_periods(filt, 18.9):.4f} periods (measured)")

f = np.linspace(5, 35, 600)


def draw(ax):
    ax.plot(f, gain_db(filt, f))
    ax.set_ylim(-80, 5)
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("gain [dB]")


figure("filter_response", draw)
