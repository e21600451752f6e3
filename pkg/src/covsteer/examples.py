"""Benchmark problem generators: a second-order LTI system and a cart-pole LTV system.

The cart-pole benchmark linearizes the nonlinear swing-up dynamics along a
nominal trajectory taking the pole from hanging (theta = 0) to upright
(theta = pi) in one second, then discretizes with a forward Euler step.

Nominal profile.  The force input cannot influence the pole acceleration when
the pole is horizontal (its lever arm through the pivot vanishes with
cos(theta)), and the dynamics pin theta_ddot = -g/l there.  Any profile that
crosses theta = pi/2 with a different acceleration therefore has no finite
inverse-dynamics input at the crossing.  The profile used here is a pair of
quintic segments, C^2 at the crossing, constructed so that the crossing is met
with theta_ddot = -g/l exactly; the nominal force stays bounded and smooth,
with the removable singularity at the crossing evaluated through its limit.
The profile shape is otherwise a free modelling choice and the generated
system should be judged by its stated boundary data, not by any particular
published trajectory plot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import cumulative_trapezoid

from .system_model import BoundaryConditions, LtvSystem

#: pole angular rate (rad/s) at the horizontal crossing of the nominal profile
CROSSING_RATE = 4.0
#: |cos theta| below which the inverse dynamics switch to the crossing limit
_CROSSING_COS_TOL = 1e-9


def lti_example() -> tuple[LtvSystem, BoundaryConditions]:
    """Second-order oscillatory LTI benchmark, horizon N = 100."""
    A = [[1.9986, -1.0], [1.0, 0.0]]
    B = [[0.03125], [0.0]]
    G = [[0.0], [0.03]]
    system = LtvSystem.constant(A, B, G, N=100)
    bc = BoundaryConditions(
        mu0=[-1.0, 1.0],
        Sigma0=[[2.0, -1.0], [-1.0, 3.0]],
        muF=[1.0, -1.0],
        SigmaF=[[1.0, 0.1], [0.1, 2.0]],
    )
    return system, bc


@dataclass(frozen=True)
class CartPoleParams:
    m_p: float = 0.01       # pole mass [kg]
    m_c: float = 1.0        # cart mass [kg]
    l: float = 0.25         # pole length [m]
    g: float = 9.81         # gravity [m/s^2]
    Ts: float = 0.001       # sample time [s]
    T: float = 1.0          # swing-up duration [s]

    def __post_init__(self):
        for name in ("m_p", "m_c", "l", "g", "Ts", "T"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        steps = self.T / self.Ts
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"T/Ts must be integral, got {steps}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.Ts))


def cartpole_dynamics(state, u, params: CartPoleParams) -> np.ndarray:
    """Time derivative (theta_dot, theta_ddot, y_dot, y_ddot) of the cart-pole.

    State order is (theta, theta_dot, y, y_dot) with theta measured from the
    downward vertical; u is the horizontal force on the cart.
    """
    th, thd, _, yd = np.asarray(state, dtype=float)
    u = float(np.asarray(u).reshape(-1)[0]) if np.ndim(u) else float(u)
    thdd = _theta_accel(th, thd, u, params)
    ydd = _y_accel(th, thd, u, params)
    return np.array([thd, thdd, yd, ydd])


def _theta_accel(th, thd, u, p: CartPoleParams):
    s, c = np.sin(th), np.cos(th)
    num = -(u + p.m_p * p.l * thd**2 * s) * c - (p.m_c + p.m_p) * p.g * s
    return num / (p.l * (p.m_c + p.m_p * s**2))


def _y_accel(th, thd, u, p: CartPoleParams):
    s, c = np.sin(th), np.cos(th)
    return (u + p.m_p * s * (p.l * thd**2 + p.g * c)) / (p.m_c + p.m_p * s**2)


def dynamics_jacobians(state, u, params: CartPoleParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic continuous-time Jacobians (df/dx, df/du) at (state, u).

    y and y_dot are cyclic: neither acceleration depends on them.
    """
    th, thd = float(state[0]), float(state[1])
    u = float(np.asarray(u).reshape(-1)[0]) if np.ndim(u) else float(u)
    p = params
    s, c = np.sin(th), np.cos(th)

    den_t = p.l * (p.m_c + p.m_p * s**2)
    num_t = -(u + p.m_p * p.l * thd**2 * s) * c - (p.m_c + p.m_p) * p.g * s
    dnum_dth = -p.m_p * p.l * thd**2 * c * c + (u + p.m_p * p.l * thd**2 * s) * s \
        - (p.m_c + p.m_p) * p.g * c
    dden_dth = 2.0 * p.l * p.m_p * s * c
    dtdd_dth = (dnum_dth * den_t - num_t * dden_dth) / den_t**2
    dtdd_dthd = -2.0 * p.m_p * p.l * thd * s * c / den_t
    dtdd_du = -c / den_t

    den_y = p.m_c + p.m_p * s**2
    num_y = u + p.m_p * s * (p.l * thd**2 + p.g * c)
    dnumy_dth = p.m_p * c * (p.l * thd**2 + p.g * c) - p.m_p * p.g * s**2
    ddeny_dth = 2.0 * p.m_p * s * c
    dydd_dth = (dnumy_dth * den_y - num_y * ddeny_dth) / den_y**2
    dydd_dthd = 2.0 * p.m_p * p.l * s * thd / den_y
    dydd_du = 1.0 / den_y

    J_x = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [dtdd_dth, dtdd_dthd, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [dydd_dth, dydd_dthd, 0.0, 0.0],
    ])
    J_u = np.array([[0.0], [dtdd_du], [0.0], [dydd_du]])
    return J_x, J_u


def _quintic(t0, t1, b0, b1) -> np.ndarray:
    """Quintic coefficients with (value, rate, accel) = b0 at t0 and b1 at t1."""
    rows, rhs = [], []
    for t, b in ((t0, b0), (t1, b1)):
        rows.append([t**j for j in range(6)])
        rows.append([j * t ** (j - 1) if j >= 1 else 0.0 for j in range(6)])
        rows.append([j * (j - 1) * t ** (j - 2) if j >= 2 else 0.0 for j in range(6)])
        rhs.extend(b)
    return np.linalg.solve(np.array(rows), np.array(rhs, dtype=float))


@dataclass(frozen=True)
class NominalTrajectory:
    """Sampled swing-up reference: angle profile, cart motion, and input."""

    params: CartPoleParams
    t: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    y: np.ndarray
    y_dot: np.ndarray
    u: np.ndarray

    def states(self) -> np.ndarray:
        """(K+1, 4) array of nominal states (theta, theta_dot, y, y_dot)."""
        return np.column_stack([self.theta, self.theta_dot, self.y, self.y_dot])


def nominal_trajectory(params: CartPoleParams = CartPoleParams()) -> NominalTrajectory:
    """Swing-up reference 0 -> pi over [0, T], sampled every Ts.

    Two quintic angle segments meet at t = T/2 with theta = pi/2, rate
    CROSSING_RATE, and acceleration -g/l (the value the dynamics force at the
    horizontal, which keeps the inverse-dynamics input finite there).  The
    nominal force solves the angular equation for u; the cart trajectory
    integrates the resulting cart acceleration from rest.
    """
    p = params
    tc = 0.5 * p.T
    c1 = _quintic(0.0, tc, (0.0, 0.0, 0.0), (np.pi / 2, CROSSING_RATE, -p.g / p.l))
    c2 = _quintic(tc, p.T, (np.pi / 2, CROSSING_RATE, -p.g / p.l), (np.pi, 0.0, 0.0))

    t = np.arange(p.steps + 1) * p.Ts

    def profile(order: int) -> np.ndarray:
        e1 = P.polyval(t, P.polyder(c1, order) if order else c1)
        e2 = P.polyval(t, P.polyder(c2, order) if order else c2)
        return np.where(t < tc, e1, e2)

    th, thd, thdd, thddd = (profile(d) for d in range(4))

    s, c = np.sin(th), np.cos(th)
    num = -thdd * p.l * (p.m_c + p.m_p * s**2) - (p.m_c + p.m_p) * p.g * s
    safe_c = np.where(np.abs(c) > _CROSSING_COS_TOL, c, 1.0)
    u_reg = num / safe_c - p.m_p * p.l * thd**2 * s
    # limit at the crossing: both num and cos have simple zeros there
    safe_thd = np.where(np.abs(thd) > 1e-12, thd, 1.0)
    u_lim = p.l * (p.m_c + p.m_p) * thddd / safe_thd - p.m_p * p.l * thd**2
    u = np.where(np.abs(c) > _CROSSING_COS_TOL, u_reg, u_lim)

    ydd = _y_accel(th, thd, u, p)
    y_dot = cumulative_trapezoid(ydd, t, initial=0.0)
    y = cumulative_trapezoid(y_dot, t, initial=0.0)
    return NominalTrajectory(
        params=p, t=t, theta=th, theta_dot=thd, theta_ddot=thdd,
        y=y, y_dot=y_dot, u=u,
    )


#: noise input column of the cart-pole benchmark
CARTPOLE_NOISE = np.array([[0.0], [0.004], [0.0], [0.008]])


def linearize_discretize(
    params: CartPoleParams = CartPoleParams(),
    nominal: NominalTrajectory | None = None,
) -> tuple[LtvSystem, BoundaryConditions]:
    """Euler-discretized linearization along the nominal: N = T/Ts - 1 = 999.

    States are deviations (d_theta, d_theta_dot, d_y, d_y_dot) from the
    nominal; A_k = I + Ts df/dx, B_k = Ts df/du at sample k, constant noise
    column, and equal diagonal boundary covariances.
    """
    p = params
    nom = nominal if nominal is not None else nominal_trajectory(p)
    N = p.steps - 1
    A = np.empty((N + 1, 4, 4))
    B = np.empty((N + 1, 4, 1))
    I4 = np.eye(4)
    for k in range(N + 1):
        state = (nom.theta[k], nom.theta_dot[k], nom.y[k], nom.y_dot[k])
        J_x, J_u = dynamics_jacobians(state, nom.u[k], p)
        A[k] = I4 + p.Ts * J_x
        B[k] = p.Ts * J_u
    system = LtvSystem(A, B, np.tile(CARTPOLE_NOISE, (N + 1, 1, 1)))
    bc = BoundaryConditions(
        mu0=np.zeros(4),
        Sigma0=0.01 * np.eye(4),
        muF=np.zeros(4),
        SigmaF=0.01 * np.eye(4),
    )
    return system, bc
