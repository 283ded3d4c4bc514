"""Planar articulated toy systems integrated in generalised coordinates.

All systems live in the x-z plane with gravity along -z.  A body's frame
origin sits at its proximal joint and the body extends along its local +x
axis; its rotation is an angle phi about the world y axis, so in (x, z)
coordinates ``R(phi) = [[cos, sin], [-sin, cos]]`` and the orientation
quaternion is ``(cos phi/2, 0, sin phi/2, 0)``.

Body 0 is either a fixed world anchor (pendulum, cartpole) or a free root
link (chains).  For a free root the first three coordinates are the system's
centre of mass and the root angle, which makes the mass matrix block diagonal
and keeps the centre-of-mass motion exact.

Every function works on a batch of episodes that share one topology; the
per-episode parameters are stacked along the leading axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..state import STATE_WIDTH

HINGE, SLIDER = "hinge", "slider"


@dataclass(frozen=True)
class Body:
    name: str
    mass: float
    length: float
    com: tuple = (0.0, 0.0)  # in the body frame (x, z)
    inertia: float = 0.0  # about the centre of mass
    fixed: bool = False


@dataclass(frozen=True)
class Joint:
    parent: int
    child: int
    kind: str
    anchor: tuple = (0.0, 0.0)  # in the parent frame (x, z)
    axis: tuple = (0.0, 1.0, 0.0)  # hinge axis, or slide direction in the parent frame
    gear: float = 1.0
    damping: float = 0.0
    actuated: bool = True


@dataclass(frozen=True)
class InitRanges:
    """Half-widths of the uniform initial-state distribution."""

    root_angle: float = np.pi
    hinge_angle: float = np.pi
    slide: float = 0.0
    velocity: float = 0.0


@dataclass(frozen=True)
class EnvSpec:
    name: str
    bodies: tuple
    joints: tuple
    gravity: tuple = (0.0, 0.0, -9.81)
    timestep: float = 0.05
    substeps: int = 10
    free_root: bool = False
    drag: tuple = (0.0, 0.0, 0.0)  # tangential, normal, rotational
    init: InitRanges = field(default_factory=InitRanges)
    planar: bool = True

    def __post_init__(self):
        if self.timestep <= 0 or self.substeps < 1:
            raise ValueError("timestep must be positive and substeps >= 1")
        n = len(self.bodies)
        children = sorted(j.child for j in self.joints)
        if children != list(range(1, n)):
            raise ValueError("joints must attach every non-root body exactly once")
        for j in self.joints:
            if not 0 <= j.parent < j.child:
                raise ValueError(f"joint {j.parent}->{j.child}: parent must precede child")
            if j.kind not in (HINGE, SLIDER):
                raise ValueError(f"unknown joint kind {j.kind!r}")
            if j.gear <= 0:
                raise ValueError("gears must be positive")
        for b in self.bodies:
            if not b.fixed and (b.mass <= 0 or b.length <= 0):
                raise ValueError(f"body {b.name!r} needs positive mass and length")
        if self.free_root == self.bodies[0].fixed:
            raise ValueError("body 0 must be fixed exactly when the root is not free")

    @property
    def num_bodies(self) -> int:
        return len(self.bodies)

    @property
    def num_coords(self) -> int:
        return 3 * self.free_root + len(self.joints)

    @property
    def actuated_joints(self) -> list[int]:
        return [k for k, j in enumerate(self.joints) if j.actuated]

    @property
    def num_actuators(self) -> int:
        return len(self.actuated_joints)

    def topology(self) -> tuple:
        """Hashable structure key: specs with equal keys can be batched."""
        return (
            self.free_root,
            tuple(b.fixed for b in self.bodies),
            tuple((j.parent, j.child, j.kind, tuple(j.axis), j.actuated) for j in self.joints),
            self.timestep,
            self.substeps,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> EnvSpec:
        d = dict(d)
        d["bodies"] = tuple(Body(**{**b, "com": tuple(b["com"])}) for b in d["bodies"])
        d["joints"] = tuple(
            Joint(**{**j, "anchor": tuple(j["anchor"]), "axis": tuple(j["axis"])}) for j in d["joints"]
        )
        d["gravity"] = tuple(d["gravity"])
        d["drag"] = tuple(d["drag"])
        d["init"] = InitRanges(**d.get("init", {}))
        return cls(**d)


# -- builders ------------------------------------------------------------------


def rod(name, mass, length) -> Body:
    return Body(name, float(mass), float(length), (length / 2.0, 0.0), mass * length**2 / 12.0)


WORLD = Body("world", 0.0, 0.0, fixed=True)


def pendulum(length=1.0, mass=1.0, gear=6.0, damping=0.05, timestep=0.05, substeps=10) -> EnvSpec:
    return EnvSpec(
        "pendulum",
        (WORLD, rod("pole", mass, length)),
        (Joint(0, 1, HINGE, gear=gear, damping=damping),),
        timestep=timestep,
        substeps=substeps,
        init=InitRanges(hinge_angle=np.pi, velocity=2.0),
    )


def cartpole(
    pole_length=1.0, pole_mass=0.3, cart_mass=1.0, gear=10.0, damping=0.5, timestep=0.05, substeps=10
) -> EnvSpec:
    cart = Body("cart", cart_mass, 0.4, (0.0, 0.0), cart_mass * 0.4**2 / 12.0)
    return EnvSpec(
        "cartpole",
        (WORLD, cart, rod("pole", pole_mass, pole_length)),
        (
            Joint(0, 1, SLIDER, axis=(1.0, 0.0, 0.0), gear=gear, damping=damping),
            Joint(1, 2, HINGE, gear=1.0, damping=0.02, actuated=False),
        ),
        timestep=timestep,
        substeps=substeps,
        init=InitRanges(hinge_angle=np.pi, slide=1.0, velocity=0.5),
    )


def chain(
    n_links=5, length=1.0, mass=1.0, gear=2.0, damping=0.1, drag=(0.1, 2.0, 0.2), timestep=0.05, substeps=10,
    lengths=None, masses=None,
) -> EnvSpec:
    """Free-floating swimmer-like chain of ``n_links`` rods with actuated hinges."""
    if n_links < 2:
        raise ValueError("a chain needs at least two links")
    lengths = [length] * n_links if lengths is None else list(lengths)
    masses = [mass] * n_links if masses is None else list(masses)
    bodies = tuple(rod(f"link{i}", masses[i], lengths[i]) for i in range(n_links))
    joints = tuple(
        Joint(i, i + 1, HINGE, anchor=(lengths[i], 0.0), gear=gear, damping=damping) for i in range(n_links - 1)
    )
    return EnvSpec(
        f"chain{n_links}",
        bodies,
        joints,
        gravity=(0.0, 0.0, 0.0),
        timestep=timestep,
        substeps=substeps,
        free_root=True,
        drag=tuple(drag),
        init=InitRanges(root_angle=np.pi, hinge_angle=0.6, velocity=0.0),
    )


def point_mass(gear=4.0, mass=1.0, timestep=0.5) -> EnvSpec:
    """1-D actuated slider without gravity: x' = x + dt v + dt^2 gear a / m."""
    return EnvSpec(
        "point",
        (WORLD, Body("mass", mass, 0.1, (0.0, 0.0), 1.0)),
        (Joint(0, 1, SLIDER, axis=(1.0, 0.0, 0.0), gear=gear, damping=0.0),),
        gravity=(0.0, 0.0, 0.0),
        timestep=timestep,
        substeps=1,
        init=InitRanges(slide=1.0, velocity=0.0),
    )


# -- batched dynamics ---------------------------------------------------------------


def _rot(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)


def _drot(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([np.stack([-s, c], -1), np.stack([-c, -s], -1)], -2)


@dataclass
class Kinematics:
    phi: np.ndarray  # (B, N)
    jphi: np.ndarray  # (N, nq), constant
    origin: np.ndarray  # (B, N, 2)
    j_origin: np.ndarray  # (B, N, 2, nq)
    com: np.ndarray  # (B, N, 2)
    j_com: np.ndarray  # (B, N, 2, nq)
    bias_com: np.ndarray  # (B, N, 2)


class BatchSystem:
    """Stacked parameters of specs sharing one topology."""

    def __init__(self, specs):
        specs = list(specs)
        self.specs = specs
        ref = specs[0]
        for s in specs[1:]:
            if s.topology() != ref.topology():
                raise ValueError("cannot batch systems with different topologies")
        self.ref = ref
        self.n = ref.num_bodies
        self.nq = ref.num_coords
        self.free = ref.free_root
        self.offset = 3 if self.free else 0
        self.mass = np.array([[b.mass for b in s.bodies] for s in specs])
        self.length = np.array([[b.length for b in s.bodies] for s in specs])
        self.com_local = np.array([[b.com for b in s.bodies] for s in specs], dtype=float)
        self.inertia = np.array([[b.inertia for b in s.bodies] for s in specs])
        self.anchor = np.array([[j.anchor for j in s.joints] for s in specs], dtype=float).reshape(len(specs), -1, 2)
        self.gear = np.array([[j.gear for j in s.joints] for s in specs]).reshape(len(specs), -1)
        self.damping = np.array([[j.damping for j in s.joints] for s in specs]).reshape(len(specs), -1)
        self.gravity = np.array([[s.gravity[0], s.gravity[2]] for s in specs])
        self.drag = np.array([s.drag for s in specs])
        self.movable = np.array([not b.fixed for b in ref.bodies])
        self.actuated = ref.actuated_joints
        self.dt = ref.timestep
        self.substeps = ref.substeps
        self.jphi = self._angle_jacobian()

    def __len__(self):
        return len(self.specs)

    def _angle_jacobian(self):
        jphi = np.zeros((self.n, self.nq))
        if self.free:
            jphi[0, 2] = 1.0
        for k, j in enumerate(self.ref.joints):
            jphi[j.child] = jphi[j.parent]
            if j.kind == HINGE:
                jphi[j.child, self.offset + k] += 1.0
        return jphi

    def kinematics(self, q, qd) -> Kinematics:
        B, n, nq = q.shape[0], self.n, self.nq
        phi = q @ self.jphi.T  # (B, N)
        phid = qd @ self.jphi.T
        origin = np.zeros((B, n, 2))
        j_origin = np.zeros((B, n, 2, nq))
        bias_origin = np.zeros((B, n, 2))
        for k, j in enumerate(self.ref.joints):
            p, c, col = j.parent, j.child, self.offset + k
            R, dR = _rot(phi[:, p]), _drot(phi[:, p])
            r = self.anchor[:, k]
            Rr = np.einsum("bij,bj->bi", R, r)
            dRr = np.einsum("bij,bj->bi", dR, r)
            P = origin[:, p] + Rr
            JP = j_origin[:, p] + dRr[:, :, None] * self.jphi[p]
            bP = bias_origin[:, p] - phid[:, p, None] ** 2 * Rr
            if j.kind == SLIDER:
                u = np.array([j.axis[0], j.axis[2]])
                Ru, dRu = R @ u, dR @ u
                s, sd = q[:, col, None], qd[:, col, None]
                origin[:, c] = P + Ru * s
                j_origin[:, c] = JP + (dRu * s)[:, :, None] * self.jphi[p]
                j_origin[:, c, :, col] += Ru
                bias_origin[:, c] = bP + 2 * phid[:, p, None] * sd * dRu - phid[:, p, None] ** 2 * Ru * s
            else:
                origin[:, c], j_origin[:, c], bias_origin[:, c] = P, JP, bP
        R, dR = _rot(phi), _drot(phi)
        Rc = np.einsum("bnij,bnj->bni", R, self.com_local)
        dRc = np.einsum("bnij,bnj->bni", dR, self.com_local)
        com = origin + Rc
        j_com = j_origin + dRc[..., None] * self.jphi[None, :, None, :]
        bias_com = bias_origin - phid[..., None] ** 2 * Rc
        if self.free:
            w = self.mass / self.mass.sum(axis=1, keepdims=True)
            shift = q[:, None, :2] - np.einsum("bn,bni->bi", w, com)[:, None]
            j_shift = -np.einsum("bn,bnij->bij", w, j_com)
            j_shift[:, 0, 0] += 1.0
            j_shift[:, 1, 1] += 1.0
            b_shift = -np.einsum("bn,bni->bi", w, bias_com)
            origin = origin + shift
            com = com + shift
            j_origin = j_origin + j_shift[:, None]
            j_com = j_com + j_shift[:, None]
            bias_com = bias_com + b_shift[:, None]
        return Kinematics(phi, self.jphi, origin, j_origin, com, j_com, bias_com)

    def mass_matrix(self, kin: Kinematics):
        m = self.mass * self.movable
        M = np.einsum("bn,bnik,bnil->bkl", m, kin.j_com, kin.j_com)
        M += np.einsum("bn,nk,nl->bkl", self.inertia * self.movable, self.jphi, self.jphi)
        return M

    def accelerations(self, q, qd, actions):
        kin = self.kinematics(q, qd)
        M = self.mass_matrix(kin)
        m = self.mass * self.movable
        force = m[..., None] * (self.gravity[:, None, :] - kin.bias_com)
        if np.any(self.drag):
            force = force + self._drag_force(kin, qd)
        Q = np.einsum("bnik,bni->bk", kin.j_com, force)
        if np.any(self.drag):
            phid = qd @ self.jphi.T
            torque = -self.drag[:, 2:3] * self.length**3 * phid * self.movable
            Q += torque @ self.jphi
        cols = self.offset + np.arange(len(self.ref.joints))
        tau = -self.damping * qd[:, cols]
        if self.actuated:
            tau[:, self.actuated] += self.gear[:, self.actuated] * actions
        Q[:, cols] += tau
        return np.linalg.solve(M, Q[..., None])[..., 0]

    def _drag_force(self, kin: Kinematics, qd):
        v = np.einsum("bnik,bk->bni", kin.j_com, qd)
        t = np.stack([np.cos(kin.phi), -np.sin(kin.phi)], -1)
        nrm = np.stack([np.sin(kin.phi), np.cos(kin.phi)], -1)
        vt = np.sum(v * t, -1, keepdims=True)
        vn = np.sum(v * nrm, -1, keepdims=True)
        L = self.length[..., None]
        return -L * (self.drag[:, None, 0:1] * vt * t + self.drag[:, None, 1:2] * vn * nrm)

    def step(self, q, qd, actions):
        """Semi-implicit Euler over ``substeps`` substeps of one control step."""
        actions = np.asarray(actions, dtype=np.float64).reshape(len(self), -1)
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            qd = qd + h * self.accelerations(q, qd, actions)
            q = q + h * qd
        return q, qd

    def energy(self, q, qd):
        kin = self.kinematics(q, qd)
        kinetic = 0.5 * np.einsum("bk,bkl,bl->b", qd, self.mass_matrix(kin), qd)
        potential = -np.einsum("bn,bi,bni->b", self.mass * self.movable, self.gravity, kin.com)
        return kinetic + potential

    def cartesian(self, q, qd) -> np.ndarray:
        """Per-body 13-feature states, shape (B, N, 13)."""
        kin = self.kinematics(q, qd)
        B = q.shape[0]
        out = np.zeros((B, self.n, STATE_WIDTH))
        out[..., 0] = kin.origin[..., 0]
        out[..., 2] = kin.origin[..., 1]
        out[..., 3] = np.cos(kin.phi / 2)
        out[..., 5] = np.sin(kin.phi / 2)
        vel = np.einsum("bnik,bk->bni", kin.j_origin, qd)
        out[..., 7] = vel[..., 0]
        out[..., 9] = vel[..., 1]
        out[..., 11] = qd @ self.jphi.T
        return out

    def generalized(self, states):
        """Inverse of :meth:`cartesian` for (B, N, 13) body states."""
        B = states.shape[0]
        phi = 2.0 * np.arctan2(states[..., 5], states[..., 3])
        phid = states[..., 11]
        origin = states[..., [0, 2]]
        vel = states[..., [7, 9]]
        q = np.zeros((B, self.nq))
        qd = np.zeros((B, self.nq))
        for k, j in enumerate(self.ref.joints):
            p, c, col = j.parent, j.child, self.offset + k
            if j.kind == HINGE:
                q[:, col] = phi[:, c] - phi[:, p]
                qd[:, col] = phid[:, c] - phid[:, p]
            else:
                R, dR = _rot(phi[:, p]), _drot(phi[:, p])
                r = self.anchor[:, k]
                u = np.array([j.axis[0], j.axis[2]])
                Ru = R @ u
                P = origin[:, p] + np.einsum("bij,bj->bi", R, r)
                vP = vel[:, p] + np.einsum("bij,bj->bi", dR, r) * phid[:, p, None]
                q[:, col] = np.sum((origin[:, c] - P) * Ru, -1)
                qd[:, col] = np.sum((vel[:, c] - vP) * Ru, -1)
        if self.free:
            R, dR = _rot(phi), _drot(phi)
            com = origin + np.einsum("bnij,bnj->bni", R, self.com_local)
            vcom = vel + np.einsum("bnij,bnj->bni", dR, self.com_local) * phid[..., None]
            w = self.mass / self.mass.sum(axis=1, keepdims=True)
            q[:, :2] = np.einsum("bn,bni->bi", w, com)
            qd[:, :2] = np.einsum("bn,bni->bi", w, vcom)
            q[:, 2] = phi[:, 0]
            qd[:, 2] = phid[:, 0]
        return q, qd

    def sample_initial(self, rngs):
        """One (q, qd) per episode, each drawn from its own generator."""
        q = np.zeros((len(self), self.nq))
        qd = np.zeros((len(self), self.nq))
        for b, (spec, rng) in enumerate(zip(self.specs, rngs)):
            ranges = spec.init
            if self.free:
                q[b, 2] = rng.uniform(-ranges.root_angle, ranges.root_angle)
            for k, j in enumerate(spec.joints):
                half = ranges.hinge_angle if j.kind == HINGE else ranges.slide
                q[b, self.offset + k] = rng.uniform(-half, half)
            qd[b] = rng.uniform(-ranges.velocity, ranges.velocity, size=self.nq)
            if self.free:
                qd[b, :2] = 0.0
        return q, qd


def rest_state(spec: EnvSpec) -> tuple[np.ndarray, np.ndarray]:
    """Zero-velocity configuration with every link hanging (or straight without gravity)."""
    hanging = np.pi / 2 if np.any(spec.gravity) else 0.0
    q = np.zeros(spec.num_coords)
    offset = 3 * spec.free_root
    angle = np.zeros(spec.num_bodies)
    for k, j in enumerate(spec.joints):
        if j.kind == HINGE:
            q[offset + k] = hanging - angle[j.parent]
            angle[j.child] = hanging
        else:
            angle[j.child] = angle[j.parent]
    return q, np.zeros(spec.num_coords)


@dataclass(frozen=True)
class GenState:
    """Generalised coordinates and velocities of one system."""

    q: np.ndarray
    qd: np.ndarray
    t: int = 0


def env_step(spec: EnvSpec, state: GenState, actions) -> GenState:
    sys_ = BatchSystem([spec])
    actions = np.asarray(actions, dtype=np.float64).reshape(1, spec.num_actuators)
    q, qd = sys_.step(state.q[None], state.qd[None], actions)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise FloatingPointError(f"non-finite simulator state at step {state.t + 1}")
    return GenState(q[0], qd[0], state.t + 1)


def to_cartesian(spec: EnvSpec, state: GenState) -> np.ndarray:
    return BatchSystem([spec]).cartesian(state.q[None], state.qd[None])[0]


def simulate(system: BatchSystem, q, qd, actions):
    """Roll out ``actions`` (B, L, A); returns Cartesian states (B, L, N, 13).

    The state at index t is the one in which action t is applied, so a
    length-L episode has L states and uses the first L - 1 actions.
    """
    B, L = actions.shape[:2]
    states = np.zeros((B, L, system.n, STATE_WIDTH))
    ok = np.ones(B, dtype=bool)
    for t in range(L):
        states[:, t] = system.cartesian(q, qd)
        if t < L - 1:
            q, qd = system.step(q, qd, actions[:, t])
            bad = ~(np.all(np.isfinite(q), axis=1) & np.all(np.isfinite(qd), axis=1))
            if bad.any():
                ok &= ~bad
                q[bad], qd[bad] = 0.0, 0.0
    return states, ok
