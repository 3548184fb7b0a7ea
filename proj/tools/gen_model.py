#!/usr/bin/env python3
"""Generates data/nimbro_op2.model.

Segment lengths and masses are estimates scaled to a 1.345 m, 17.5 kg robot.
Inertias use solid-box approximations of each segment.
"""

import json
import math
import sys

THIGH = 0.28
SHANK = 0.28
FOOT = 0.04
HIP_X = 0.0
HIP_Y = 0.055
HEAD_TOP = 0.745  # sole at -0.60 gives 1.345 m standing height


def box(m, a, b, c):
    return [[m * (b * b + c * c) / 12, 0.0, 0.0],
            [0.0, m * (a * a + c * c) / 12, 0.0],
            [0.0, 0.0, m * (a * a + b * b) / 12]]


links = []
joints = []


def link(name, parent, xyz, mass, com, dims):
    links.append({
        "name": name,
        "parent": parent,
        "origin": {"xyz": list(xyz), "quat": [1.0, 0.0, 0.0, 0.0]},
        "mass": mass,
        "com": list(com),
        "inertia": box(mass, *dims),
    })


def joint(name, link_name, axis, lo, hi, chain):
    joints.append({"name": name, "link": link_name, "axis": axis,
                   "limits": [lo, hi], "chain": chain})


X, Y, Z = [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]

link("trunk", None, (0, 0, 0), 7.5, (0.0, 0.0, 0.22), (0.16, 0.30, 0.40))

link("neck", "trunk", (0, 0, 0.50), 0.2, (0, 0, 0.025), (0.05, 0.05, 0.05))
joint("neck_yaw", "neck", Z, -2.0, 2.0, "neck")
link("head", "neck", (0, 0, 0.05), 0.8, (0.02, 0, 0.09), (0.16, 0.16, 0.19))
joint("head_pitch", "head", Y, -0.8, 1.2, "neck")

for side, s in (("left", 1.0), ("right", -1.0)):
    p = side + "_"
    link(p + "shoulder", "trunk", (0, s * 0.22, 0.42), 0.2, (0, 0, 0),
         (0.05, 0.05, 0.05))
    joint(p + "shoulder_pitch", p + "shoulder", Y, -3.0, 3.0, side + "_arm")
    link(p + "upper_arm", p + "shoulder", (0, 0, 0), 0.4, (0, 0, -0.1),
         (0.05, 0.05, 0.2))
    lo, hi = (-0.3, 1.6) if s > 0 else (-1.6, 0.3)
    joint(p + "shoulder_roll", p + "upper_arm", X, lo, hi, side + "_arm")
    link(p + "lower_arm", p + "upper_arm", (0, 0, -0.2), 0.4, (0, 0, -0.1),
         (0.05, 0.05, 0.2))
    joint(p + "elbow_pitch", p + "lower_arm", Y, -2.2, 0.2, side + "_arm")

for side, s in (("left", 1.0), ("right", -1.0)):
    p = side + "_"
    chain = side + "_leg"
    rl, rh = (-0.5, 0.7) if s > 0 else (-0.7, 0.5)
    link(p + "hip_yaw_link", "trunk", (HIP_X, s * HIP_Y, 0), 0.3,
         (0, 0, 0.03), (0.06, 0.06, 0.06))
    joint(p + "hip_yaw", p + "hip_yaw_link", Z, -1.0, 1.0, chain)
    link(p + "hip_roll_link", p + "hip_yaw_link", (0, 0, 0), 0.5, (0, 0, 0),
         (0.08, 0.06, 0.06))
    joint(p + "hip_roll", p + "hip_roll_link", X, rl, rh, chain)
    link(p + "thigh", p + "hip_roll_link", (0, 0, 0), 1.2,
         (0, 0, -THIGH / 2), (0.08, 0.08, THIGH))
    joint(p + "hip_pitch", p + "thigh", Y, -1.9, 1.0, chain)
    link(p + "shank", p + "thigh", (0, 0, -THIGH), 1.0, (0, 0, -SHANK / 2),
         (0.07, 0.07, SHANK))
    joint(p + "knee_pitch", p + "shank", Y, -0.1, 2.6, chain)
    link(p + "ankle_link", p + "shank", (0, 0, -SHANK), 0.2, (0, 0, 0),
         (0.05, 0.05, 0.05))
    joint(p + "ankle_pitch", p + "ankle_link", Y, -1.4, 1.2, chain)
    link(p + "foot", p + "ankle_link", (0, 0, 0), 0.3, (0.01, 0, -FOOT),
         (0.22, 0.12, 0.02))
    lo, hi = (-0.7, 0.5) if s > 0 else (-0.5, 0.7)
    joint(p + "ankle_roll", p + "foot", X, lo, hi, chain)

actuators = []
coupling = []


def actuator(name, terms, gear=1.0):
    aid = len(actuators) + 1
    actuators.append({"id": aid, "name": name})
    for jname, sign in terms:
        coupling.append([aid, jname, sign, gear, 0.0])


actuator("neck_yaw", [("neck_yaw", 1)])
actuator("head_pitch", [("head_pitch", 1)])
for side in ("left", "right"):
    for j in ("shoulder_pitch", "shoulder_roll", "elbow_pitch"):
        actuator(f"{side}_{j}", [(f"{side}_{j}", 1)])
for side in ("left", "right"):
    p = side + "_"
    actuator(p + "hip_yaw", [(p + "hip_yaw", 1)], 2.0)
    actuator(p + "hip_roll_master", [(p + "hip_roll", 1)], 2.0)
    actuator(p + "hip_roll_slave", [(p + "hip_roll", -1)], 2.0)
    actuator(p + "thigh_hip_master", [(p + "hip_pitch", 1)])
    actuator(p + "thigh_hip_slave", [(p + "hip_pitch", -1)])
    actuator(p + "thigh_knee_master", [(p + "hip_pitch", 1)])
    actuator(p + "thigh_knee_slave", [(p + "hip_pitch", -1)])
    actuator(p + "shank_knee_master", [(p + "hip_pitch", 1), (p + "knee_pitch", 1)])
    actuator(p + "shank_knee_slave", [(p + "hip_pitch", -1), (p + "knee_pitch", -1)])
    actuator(p + "shank_ankle_master", [(p + "ankle_pitch", -1)])
    actuator(p + "shank_ankle_slave", [(p + "ankle_pitch", 1)])
    actuator(p + "ankle_roll_master", [(p + "ankle_roll", 1)], 2.0)
    actuator(p + "ankle_roll_slave", [(p + "ankle_roll", -1)], 2.0)

notes = [
    "Segment lengths, masses and gear ratios are estimates, not measured values.",
    "Scaled to 1.345 m standing height and 17.5 kg total mass.",
    "Inertias are solid-box approximations about each link CoM.",
    "Link frames: x forward, y left, z up. The trunk origin is the hip-axis plane.",
    "URDF mapping: links[] ~ <link> with <inertial>, origin ~ the <joint> origin of",
    "the joint driving the link, joints[] ~ revolute <joint> with axis and limits.",
    "",
    "Parallel leg (sagittal view). Each leg segment is a parallelogram driven by",
    "a master/slave servo pair at each end:",
    "",
    "        hip  o==[thigh_hip]==o",
    "             |               |      thigh rows:  +-hip_pitch",
    "             |   thigh       |",
    "             |               |",
    "       knee  o==[thigh_knee]=o      thigh knee-end rows: +-hip_pitch",
    "             o==[shank_knee]=o      shank knee-end rows: +-(hip_pitch + knee_pitch)",
    "             |   shank       |",
    "             |               |",
    "      ankle  o==[shank_ankle]o      shank ankle-end rows: -+ankle_pitch",
    "            /_____foot______\\",
    "",
    "With the parallelogram constraint ankle_pitch = -(hip_pitch + knee_pitch)",
    "the foot stays parallel to the trunk and the knee-end and ankle-end shank",
    "servos read the same angle; any difference appears in the residual of the",
    "least-squares feedback fusion.",
]

doc = {
    "name": "nimbro_op2",
    "notes": notes,
    "links": links,
    "joints": joints,
    "actuators": actuators,
    "coupling": coupling,
    "servo_spec": {"encoder_resolution": 4096, "stall_torque": 10.0,
                   "no_load_speed_rpm": 55.0, "nominal_voltage": 14.8},
    "leg_geometry": {"thigh": THIGH, "shank": SHANK, "hip_offset_x": HIP_X,
                     "hip_offset_y": HIP_Y, "foot_offset": FOOT},
}

total = sum(l["mass"] for l in links)
assert math.isclose(total, 17.5), total
assert len(joints) == 20 and len(actuators) == 34

out = sys.argv[1] if len(sys.argv) > 1 else "data/nimbro_op2.model"
with open(out, "w") as f:
    json.dump(doc, f, indent=2)
    f.write("\n")
