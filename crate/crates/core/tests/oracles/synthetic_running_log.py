"""Writes a synthetic 10 s running trajectory log and its strike labels.

Each foot carries a half-sine vertical load for 35% of a 0.733 s cycle, the
left foot half a cycle behind the right. Joint angles follow smooth periodic
profiles with a slow amplitude drift so cycles are not identical.

Usage: synthetic_running_log.py LOG_OUT LABELS_OUT
"""
import math
import sys

PERIOD = 0.733
ONSET = 0.05
STANCE = 0.35
DT = 0.01
STEPS = 1000
MASS = 50.85 + 2 * (7.5 + 3.4875 + 1.0875)
BW = MASS * 9.80665
PEAK = 2.5

COORDS = ["pelvis_x", "pelvis_y", "pelvis_rotation", "hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l"]
MUSCLES = ["hamstrings", "bifemsh", "glut_max", "iliopsoas", "rect_fem", "vasti", "gastroc", "soleus", "tib_ant"]
MUSCLES = [m + "_r" for m in MUSCLES] + [m + "_l" for m in MUSCLES]
OBS = [
    "pelvis_rotation", "pelvis_x", "pelvis_y", "pelvis_rotation_speed", "pelvis_vx", "pelvis_vy",
    "hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l",
    "hip_r_speed", "knee_r_speed", "ankle_r_speed", "hip_l_speed", "knee_l_speed", "ankle_l_speed",
    "com_x", "com_y", "com_vx", "com_vy",
    "head_x", "head_y", "pelvis_pos_x", "pelvis_pos_y", "torso_x", "torso_y", "toes_l_x", "toes_l_y",
    "toes_r_x", "toes_r_y", "talus_l_x", "talus_l_y", "talus_r_x", "talus_r_y",
    "psoas_strength_r", "psoas_strength_l", "obstacle_distance", "obstacle_y", "obstacle_radius",
]


def phase(t, shift):
    return ((t - ONSET) / PERIOD - shift) % 1.0


def load(t, shift):
    p = phase(t, shift)
    return BW * PEAK * math.sin(math.pi * p / STANCE) if p < STANCE else 0.0


def angles(t, shift):
    p = 2 * math.pi * phase(t, shift)
    drift = 1.0 + 0.06 * math.sin(0.9 * t)
    hip = math.radians(drift * (22 * math.cos(p) + 8) )
    knee = -math.radians(drift * (35 - 30 * math.cos(p - 0.6) + 5 * math.sin(2 * p)))
    ankle = math.radians(drift * (10 * math.sin(p + 0.3) - 3))
    return [hip, knee, ankle]


def main():
    log_path, labels_path = sys.argv[1], sys.argv[2]
    header = ["step", "time"] + COORDS + [c + "_speed" for c in COORDS]
    header += ["act_" + m for m in MUSCLES] + ["exc_" + m for m in MUSCLES]
    header += ["grf_r", "grf_l", "reward"] + ["obs_" + o for o in OBS]
    with open(log_path, "w") as f:
        f.write("# musclerun-log/1 seed=0 difficulty=0 max_obstacles=0 lambda=1e-07 body_weight=%r\n" % BW)
        f.write(",".join(header) + "\n")
        for i in range(STEPS + 1):
            t = i * DT
            q = [3.6 * t, 0.0, -0.1] + angles(t, 0.0) + angles(t, 0.5)
            row = [str(i), repr(t)] + [repr(v) for v in q] + ["0.0"] * 9
            row += ["0.05"] * 18 + ["0.0"] * 18
            row += [repr(load(t, 0.0)), repr(load(t, 0.5)), "0.0"] + ["0.0"] * 41
            f.write(",".join(row) + "\n")
    # Exact threshold crossings, 5% of body weight.
    lag = STANCE * math.asin(0.05 / PEAK) / math.pi
    with open(labels_path, "w") as f:
        f.write("foot,time\n")
        for foot, shift in (("right", 0.0), ("left", 0.5)):
            k = 0
            while True:
                t = ONSET + (k + shift + lag) * PERIOD
                if t > STEPS * DT:
                    break
                if t >= 0.0:
                    f.write("%s,%r\n" % (foot, t))
                k += 1


if __name__ == "__main__":
    main()
