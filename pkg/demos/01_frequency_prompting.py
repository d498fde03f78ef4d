#!/usr/bin/env python3
"""A walk through the frequency-domain half of the visual prompter.

An image's DCT puts its content in the top-left (low-frequency) corner of the
coefficient grid. The frequency prompt is a small learned block of
coefficients injected exactly there, scaled by a sigmoid-squashed scalar, so
the prompter can shade the image's coarse structure without touching fine
detail. This script shows the round trip, the embedding, and how the strength
scalar fades the prompt in and out.
"""

import numpy as np

from prompt_tuner.datagen import ShiftSpec, biased_dataset
from prompt_tuner.prompter import apply_frequency_prompt, sigmoid
from prompt_tuner.spectral import dct2, embed_low_frequency, idct2

rng = np.random.default_rng(0)

# --- The transform is orthonormal: energy preserved, inversion exact. -------
image = biased_dataset(ShiftSpec(kind="biased", rho=1.0, n_per_class=1)).images[3]
coeffs = dct2(image)
print(f"image energy          {np.linalg.norm(image):.6f}")
print(f"coefficient energy    {np.linalg.norm(coeffs):.6f}")
print(f"round-trip max error  {np.max(np.abs(idct2(coeffs) - image)):.2e}")

# --- Energy concentrates in the low-frequency corner. -----------------------
corner = coeffs[:, :7, :7]
share = np.sum(corner**2) / np.sum(coeffs**2)
print(f"\ntop-left 7x7 of 28x28 holds {share:.1%} of the spectrum's energy")

# --- A small coefficient block lands in that corner, zero-padded elsewhere. -
block = rng.normal(size=(3, 7, 7)) * 0.1
embedded = embed_low_frequency(block, (28, 28))
print(f"embedded grid nonzeros: {np.count_nonzero(embedded)} "
      f"(block has {np.count_nonzero(block)})")

# --- The strength scalar gates the prompt through a sigmoid. ----------------
prompt_vp = rng.normal(size=(3, 14, 14)) * 0.5
print("\nstrength  sigmoid   max |output - image|")
for scale in (-5.0, -2.0, 0.0, 2.0, 5.0):
    prompted = apply_frequency_prompt(image, prompt_vp, scale)
    print(f"  {scale:+5.1f}   {sigmoid(scale):7.4f}   {np.max(np.abs(prompted - image)):.4f}")
print("\nAt -5 the prompt is effectively muted, which is where training starts;"
      "\nthe optimizer opens the gate only if frequency prompting helps.")
