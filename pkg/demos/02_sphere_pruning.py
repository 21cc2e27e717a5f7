"""
How many obstacle spheres matter
================================

Six tilted boxes surround the origin, each covered by 64 spheres. A module at
the center only needs the spheres whose tangent planes are not hidden behind
another sphere's plane.
"""

import numpy as np

from modqp.environment import load_environment, refine_spheres
from modqp.modules import bundled_path

env = load_environment(bundled_path("environments", "clutter6.env"))
print(f"{len(env.spheres)} spheres from {len(env.boxes)} boxes")

module_radius = 0.035
for p in ([0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.0, -0.05, 0.03]):
    kept, planes = refine_spheres(np.array(p), module_radius, env.spheres)
    boxes = sorted({s.source_id for s in kept})
    print(f"module at {p}: {len(kept)} spheres kept ({100 * len(kept) / len(env.spheres):.1f}%), from {boxes}")

# each kept sphere turns into one velocity row: motion toward its tangent
# plane is limited by the distance that is left
plane = planes[0]
print("first plane normal", np.round(plane.normal, 3), "distance left", round(plane.rhs, 4))
