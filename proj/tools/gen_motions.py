#!/usr/bin/env python3
"""Writes the shipped keyframe motions to data/motions/.

Get-up frames use support "none" while the trunk lies on the ground.

Poses are hand-tuned choreography, not recorded robot data. Run
`op2 motion fmt` on the output to get the canonical text form.
"""

import json
import os
import sys

JOINTS = [
    "neck_yaw", "head_pitch",
    "left_shoulder_pitch", "left_shoulder_roll", "left_elbow_pitch",
    "right_shoulder_pitch", "right_shoulder_roll", "right_elbow_pitch",
    "left_hip_yaw", "left_hip_roll", "left_hip_pitch", "left_knee_pitch",
    "left_ankle_pitch", "left_ankle_roll",
    "right_hip_yaw", "right_hip_roll", "right_hip_pitch", "right_knee_pitch",
    "right_ankle_pitch", "right_ankle_roll",
]

STAND = {
    "left_shoulder_roll": 0.1, "right_shoulder_roll": -0.1,
    "left_elbow_pitch": -0.3, "right_elbow_pitch": -0.3,
    "left_hip_pitch": -0.3, "left_knee_pitch": 0.6, "left_ankle_pitch": -0.3,
    "right_hip_pitch": -0.3, "right_knee_pitch": 0.6, "right_ankle_pitch": -0.3,
}


def pose(**over):
    p = {j: 0.0 for j in JOINTS}
    p.update(STAND)
    p.update(over)
    return p


def frame(t, p, support="both", eff=None, vel=None, pid=None):
    f = {"t": t, "pos": p, "support": support}
    if eff is not None:
        f["eff"] = eff
    if vel:
        f["vel"] = vel
    if pid:
        f["pid"] = pid
    return f


def uniform(e):
    return {j: e for j in JOINTS}


def kick():
    # Weight over the left foot, right leg swings through.
    shift = dict(left_hip_roll=0.12, left_ankle_roll=-0.12,
                 right_hip_roll=0.12, right_ankle_roll=-0.12)
    lift = dict(shift, right_hip_pitch=-0.7, right_knee_pitch=1.5, right_ankle_pitch=-0.7)
    strike = dict(shift, right_hip_pitch=-1.0, right_knee_pitch=0.25, right_ankle_pitch=0.1,
                  left_shoulder_pitch=-0.4, right_shoulder_pitch=0.4)
    balance = ["left_ankle_pitch", "left_ankle_roll"]
    return {
        "name": "kick",
        "joints": JOINTS,
        "pid_gains": {
            "left_ankle_pitch": {"axis": "pitch", "p": 0.3, "i": 0.0, "d": 0.02},
            "left_ankle_roll": {"axis": "roll", "p": 0.3, "i": 0.0, "d": 0.02},
        },
        "keyframes": [
            frame(0.0, pose()),
            frame(0.6, pose(**shift), "left", pid=balance),
            frame(1.1, pose(**lift), "left", pid=balance),
            frame(1.5, pose(**strike), "left", uniform(1.0),
                  vel={"right_hip_pitch": -1.0, "right_knee_pitch": -2.0}, pid=balance),
            frame(2.0, pose(**lift), "left", pid=balance),
            frame(2.6, pose(**shift), "both"),
            frame(3.2, pose()),
        ],
    }


def getup_prone():
    # Lying face down: arms push the trunk up, legs fold under, then stand.
    push = dict(left_shoulder_pitch=-1.4, right_shoulder_pitch=-1.4,
                left_elbow_pitch=-1.2, right_elbow_pitch=-1.2, head_pitch=-0.4)
    extend = dict(push, left_elbow_pitch=-0.1, right_elbow_pitch=-0.1)
    tuck = dict(extend, left_hip_pitch=-1.7, left_knee_pitch=2.4, left_ankle_pitch=-0.7,
                right_hip_pitch=-1.7, right_knee_pitch=2.4, right_ankle_pitch=-0.7)
    crouch = dict(left_hip_pitch=-1.2, left_knee_pitch=2.3, left_ankle_pitch=-1.1,
                  right_hip_pitch=-1.2, right_knee_pitch=2.3, right_ankle_pitch=-1.1,
                  left_shoulder_pitch=-0.6, right_shoulder_pitch=-0.6)
    return {
        "name": "getup_prone",
        "joints": JOINTS,
        "keyframes": [
            frame(0.0, pose(left_hip_pitch=0.0, left_knee_pitch=0.0, left_ankle_pitch=0.0,
                            right_hip_pitch=0.0, right_knee_pitch=0.0, right_ankle_pitch=0.0),
                  "none", uniform(0.4)),
            frame(0.8, pose(**push), "none", uniform(0.8)),
            frame(1.6, pose(**extend), "none", uniform(1.0)),
            frame(2.6, pose(**tuck), "none", uniform(1.0)),
            frame(3.6, pose(**crouch), "both", uniform(1.0)),
            frame(4.6, pose(), "both", uniform(0.8)),
        ],
    }


def getup_supine():
    # Lying on the back: sit up with the arms behind, roll forward into a crouch.
    brace = dict(left_shoulder_pitch=1.6, right_shoulder_pitch=1.6,
                 left_elbow_pitch=-0.2, right_elbow_pitch=-0.2, head_pitch=0.6)
    sit = dict(brace, left_hip_pitch=-1.5, right_hip_pitch=-1.5)
    fold = dict(sit, left_knee_pitch=2.3, right_knee_pitch=2.3,
                left_ankle_pitch=-0.8, right_ankle_pitch=-0.8)
    crouch = dict(left_hip_pitch=-1.2, left_knee_pitch=2.3, left_ankle_pitch=-1.1,
                  right_hip_pitch=-1.2, right_knee_pitch=2.3, right_ankle_pitch=-1.1,
                  left_shoulder_pitch=-0.6, right_shoulder_pitch=-0.6)
    return {
        "name": "getup_supine",
        "joints": JOINTS,
        "keyframes": [
            frame(0.0, pose(left_hip_pitch=0.0, left_knee_pitch=0.0, left_ankle_pitch=0.0,
                            right_hip_pitch=0.0, right_knee_pitch=0.0, right_ankle_pitch=0.0),
                  "none", uniform(0.4)),
            frame(0.8, pose(**brace), "none", uniform(0.8)),
            frame(1.8, pose(**sit), "none", uniform(1.0)),
            frame(2.8, pose(**fold), "none", uniform(1.0)),
            frame(3.8, pose(**crouch), "both", uniform(1.0)),
            frame(4.8, pose(), "both", uniform(0.8)),
        ],
    }


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "data", "motions")
    os.makedirs(out, exist_ok=True)
    for m in (kick(), getup_prone(), getup_supine()):
        with open(os.path.join(out, m["name"] + ".motion"), "w") as f:
            json.dump(m, f, indent=2, sort_keys=True)
            f.write("\n")


if __name__ == "__main__":
    main()
