"""
Toy images and collages
=======================

The detector never sees a real GAN. It learns from collages: a real toy
image and a generated one are blended through a Perlin-noise mask, and a
few discs of real pixels are pasted at wrong places to mimic duplicated
parts. Every pixel keeps its provenance, so labels come for free.
"""

from pathlib import Path

import numpy as np

from pixelcritic.collage import field_to_alpha, perlin_field
from pixelcritic.imageio import write_label, write_png
from pixelcritic.synth import CollageParams, synthesize_training_set
from pixelcritic.toyworld import toy_images

out = Path("demo_out/collages")
out.mkdir(parents=True, exist_ok=True)

# Real images are clean class templates; generated ones get colour drift,
# jittered shapes, blur and noise that grow with the corruption level c.
real = toy_images(8, "real", classes=(0, 1, 2, 3), seed=1)
for c in (0.0, 0.5, 1.0):
    gen = toy_images(1, "generated", classes=(0,), corruption=c, seed=2)
    write_png(out / f"generated_c{c:.1f}.png", gen[0][0])
write_png(out / "real.png", real[0][0])

# The raw noise is exactly zero on lattice nodes; the normalised field is
# thresholded into a soft alpha mask.
raw = perlin_field(64, 64, 4, seed=0, normalize=False)
print("raw noise on lattice nodes:", np.abs(raw[::16, ::16]).max())
alpha = field_to_alpha(perlin_field(64, 64, 4, seed=0), threshold=0.5, softness=0.1)
write_png(out / "alpha.png", alpha)

gen = toy_images(8, "generated", classes=(0, 1, 2, 3), corruption=(0.25, 1.0), seed=2)
samples = synthesize_training_set(real, gen, 4, CollageParams(), seed=100)
for i, s in enumerate(samples):
    write_png(out / f"collage_{i}.png", s.image)
    write_label(out / f"label_{i}.png", s.label)
    print(f"collage {i}: class {s.provenance['class']}, {100 * s.label.mean():.0f}% real pixels")
