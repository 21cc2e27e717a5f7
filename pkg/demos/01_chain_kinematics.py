"""
Forward kinematics and Jacobians of a two-module chain
======================================================

Two CKBot UBar modules are stacked top to bottom. We build the frame graph,
pull out the chain from the world to the top connector of the second module
and watch the tip move as the joints bend.
"""

import numpy as np

from modqp.kinematics import Base, Connection, ConfigurationGraph, build_kinematics_graph, get_chain
from modqp.modules import bundled_library

library = bundled_library()
config = ConfigurationGraph(
    modules=(("m1", "ckbot-ubar"), ("m2", "ckbot-ubar")),
    connections=(Connection("m1", "T", "m2", "B", case=0),),
    base=Base("m1", "B"),
)
graph = build_kinematics_graph(config, library)

# the chain to m2.T passes through both bending joints
chain = get_chain(graph, "m2.T")
print("chain joints:", chain.joints)

for theta in ([0.0, 0.0], [0.5, 0.0], [0.5, -0.5]):
    chain.theta = theta
    print(f"theta = {theta}: tip at {np.round(chain.position, 4)}")

# columns of the spatial Jacobian are the joint twists seen from the world;
# both joints bend about world x, so the angular rows agree
chain.theta = [0.3, 0.4]
print("spatial Jacobian:\n", np.round(chain.jacobian, 4))

# the module Jacobian of m2 keeps only the joints upstream of its body
print("module Jacobian of m2:\n", np.round(chain.module_jacobian("m2"), 4))
