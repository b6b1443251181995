"""14-joint person-centric skeleton: joints, limbs and left/right mirroring."""

from __future__ import annotations

from dataclasses import dataclass, field

VISIBLE = 0
SELF_OCCLUDED = 1
OBJECT_OCCLUDED = 2

JOINT_NAMES = (
    "head_top", "neck",
    "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow",
    "l_wrist", "r_wrist",
    "l_hip", "r_hip",
    "l_knee", "r_knee",
    "l_ankle", "r_ankle",
)

LIMBS = (
    (0, 1),
    (1, 2), (1, 3),
    (2, 4), (3, 5),
    (4, 6), (5, 7),
    (1, 8), (1, 9),
    (8, 10), (9, 11),
    (10, 12), (11, 13),
)

# report columns, keyed like the benchmark tables
JOINT_GROUPS = {
    "Head": (0, 1),
    "Sho.": (2, 3),
    "Elb.": (4, 5),
    "Wri.": (6, 7),
    "Hip": (8, 9),
    "Knee": (10, 11),
    "Ank.": (12, 13),
}

LIMB_CLASSES = {
    "Torso": (1, 2, 7, 8),
    "U.Leg": (9, 10),
    "L.Leg": (11, 12),
    "U.Arm": (3, 4),
    "Forearm": (5, 6),
    "Head": (0,),
}


def _mirror(names):
    swap = {"l_": "r_", "r_": "l_"}
    index = {n: i for i, n in enumerate(names)}
    return tuple(index[swap[n[:2]] + n[2:]] if n[:2] in swap else i for i, n in enumerate(names))


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple = JOINT_NAMES
    limbs: tuple = LIMBS
    mirror: tuple = field(default=None)

    def __post_init__(self):
        if self.mirror is None:
            object.__setattr__(self, "mirror", _mirror(self.joint_names))

    @property
    def num_joints(self):
        return len(self.joint_names)

    @property
    def num_limbs(self):
        return len(self.limbs)

    def index(self, name):
        return self.joint_names.index(name)

    def channel_mirror(self):
        """Mirror permutation over heatmap channels; background maps to itself."""
        return self.mirror + (self.num_joints,)

    def is_tree(self):
        n = self.num_joints
        if len(self.limbs) != n - 1:
            return False
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.limbs:
            ri, rj = find(i), find(j)
            if ri == rj:
                return False
            parent[ri] = rj
        return len({find(i) for i in range(n)}) == 1


SKELETON = Skeleton()
