//! Finite-volume reference for viscous Burgers `u_t + (u²/2)_x = ε u_xx` on the
//! periodic interval `[0, 2π)`: MUSCL/minmod reconstruction, Rusanov fluxes,
//! central diffusion and SSP-RK3. Cell `j` is centred at `j h`.

use std::f64::consts::PI;

pub struct BurgersFv {
    pub cells: usize,
    pub epsilon: f64,
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

impl BurgersFv {
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.cells as f64
    }

    /// Exact cell averages of `sin x`.
    pub fn sine_averages(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.cells)
            .map(|j| {
                let a = (j as f64 - 0.5) * h;
                let b = (j as f64 + 0.5) * h;
                (a.cos() - b.cos()) / h
            })
            .collect()
    }

    fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let n = self.cells;
        let h = self.spacing();
        let at = |j: isize| u[j.rem_euclid(n as isize) as usize];
        let slope: Vec<f64> = (0..n as isize)
            .map(|j| minmod(at(j) - at(j - 1), at(j + 1) - at(j)))
            .collect();
        // numerical flux through the right face of cell j
        let face: Vec<f64> = (0..n)
            .map(|j| {
                let l = u[j] + 0.5 * slope[j];
                let r = u[(j + 1) % n] - 0.5 * slope[(j + 1) % n];
                let speed = l.abs().max(r.abs());
                let conv = 0.25 * (l * l + r * r) - 0.5 * speed * (r - l);
                let diff = self.epsilon * (u[(j + 1) % n] - u[j]) / h;
                conv - diff
            })
            .collect();
        (0..n)
            .map(|j| -(face[j] - face[(j + n - 1) % n]) / h)
            .collect()
    }

    pub fn evolve(&self, mut u: Vec<f64>, t_final: f64) -> Vec<f64> {
        let h = self.spacing();
        let mut t = 0.0;
        while t < t_final {
            let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let mut dt = (0.4 * h / sup).min(0.2 * h * h / self.epsilon.max(1e-300));
            if t + dt > t_final {
                dt = t_final - t;
            }
            let k1 = self.rhs(&u);
            let u1: Vec<f64> = u.iter().zip(&k1).map(|(a, k)| a + dt * k).collect();
            let k2 = self.rhs(&u1);
            let u2: Vec<f64> = u
                .iter()
                .zip(&u1)
                .zip(&k2)
                .map(|((a, b), k)| 0.75 * a + 0.25 * (b + dt * k))
                .collect();
            let k3 = self.rhs(&u2);
            u = u
                .iter()
                .zip(&u2)
                .zip(&k3)
                .map(|((a, b), k)| a / 3.0 + 2.0 / 3.0 * (b + dt * k))
                .collect();
            t += dt;
        }
        u
    }
}
