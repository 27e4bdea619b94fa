"""How much cafe noise reaches each microphone.

Mixes noise into a clean synthetic trial so the external microphone
rises by 20 dB in the 0.1-2 kHz band, then reports the band level of
both microphones before and after. The internal microphone sits inside
the finger and gets the same noise about 10 dB weaker, but its clean
level in this low band is small, so its relative rise can be larger.

    python3 demos/noise_robustness.py
"""

import numpy as np

from fabrictouch import synth
from fabrictouch.dsp import band_power, welch_psd
from fabrictouch.evaluate import noisy_trial


def band_db(trial, stream):
    p = band_power(welch_psd(trial.audio_windows(stream)), 100, 2000).mean()
    return 10 * np.log10(p)


def main():
    spec = synth.well_separated(3, seed=0)[0]
    clean = synth.generate_trial(spec, 100, 0, frame_shape=(60, 80))
    noisy = noisy_trial(clean, seed=1)
    print("band 0.1-2 kHz level [dB re full scale]")
    for stream in ("internal", "external"):
        before, after = band_db(clean, stream), band_db(noisy, stream)
        print(f"  {stream:>8}: {before:7.1f} -> {after:7.1f}  ({after - before:+.1f} dB)")


if __name__ == "__main__":
    main()
