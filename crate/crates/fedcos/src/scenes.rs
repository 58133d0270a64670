//! Built-in reference scenes and method selectors.
//!
//! The two- and three-client quadratic scenes are small enough to have
//! closed-form optima, which the test suites solve independently. The blobs
//! scene is the desk-scale non-IID classification benchmark used for the
//! mechanism and communication-efficiency comparisons.

use crate::error::{Error, Result};
use crate::penalties::PenaltyConfig;
use crate::simulator::{
    DataSpec, ObjectiveSpec, QuadraticProblemSpec, RuleKind, SimConfig,
};
use crate::strategies::LocalPlan;
use crate::data::PartitionScheme;

/// Base server/local method plus an optional FedCos direction penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub base: BaseMethod,
    pub fedcos_mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseMethod {
    FedAvg,
    FedProx { mu: f64 },
    FedAvgM { beta: f64 },
    FedOpt { eta_g: f64 },
}

impl MethodSpec {
    pub fn fedavg() -> Self {
        MethodSpec {
            base: BaseMethod::FedAvg,
            fedcos_mu: 0.0,
        }
    }

    pub fn fedcos(mu: f64) -> Self {
        MethodSpec {
            base: BaseMethod::FedAvg,
            fedcos_mu: mu,
        }
    }

    pub fn fedprox(mu: f64) -> Self {
        MethodSpec {
            base: BaseMethod::FedProx { mu },
            fedcos_mu: 0.0,
        }
    }

    pub fn fedavgm(beta: f64) -> Self {
        MethodSpec {
            base: BaseMethod::FedAvgM { beta },
            fedcos_mu: 0.0,
        }
    }

    pub fn fedopt(eta_g: f64) -> Self {
        MethodSpec {
            base: BaseMethod::FedOpt { eta_g },
            fedcos_mu: 0.0,
        }
    }

    pub fn with_fedcos(mut self, mu: f64) -> Self {
        self.fedcos_mu = mu;
        self
    }

    pub fn penalties(&self) -> PenaltyConfig {
        PenaltyConfig {
            mu_cos: self.fedcos_mu,
            mu_prox: match self.base {
                BaseMethod::FedProx { mu } => mu,
                _ => 0.0,
            },
        }
    }

    pub fn rule(&self) -> RuleKind {
        match self.base {
            BaseMethod::FedAvg | BaseMethod::FedProx { .. } => RuleKind::Average,
            BaseMethod::FedAvgM { beta } => RuleKind::Momentum { beta },
            BaseMethod::FedOpt { eta_g } => RuleKind::Scaled { eta_g },
        }
    }

    pub fn label(&self) -> String {
        let base = match self.base {
            BaseMethod::FedAvg => "fedavg".to_string(),
            BaseMethod::FedProx { mu } => format!("fedprox({mu})"),
            BaseMethod::FedAvgM { beta } => format!("fedavgm({beta})"),
            BaseMethod::FedOpt { eta_g } => format!("fedopt({eta_g})"),
        };
        if self.fedcos_mu > 0.0 {
            format!("{base}+fedcos({})", self.fedcos_mu)
        } else {
            base
        }
    }

    /// Parses "fedavg", "fedprox:0.1", "fedavgm:0.5", "fedopt:1.5",
    /// "fedcos:0.02", or "<base>+fedcos:<mu>".
    pub fn parse(spec: &str) -> Result<Self> {
        let mut method: Option<MethodSpec> = None;
        let mut fedcos_mu = 0.0;
        for part in spec.split('+') {
            let (name, param) = match part.split_once(':') {
                Some((n, p)) => {
                    let value: f64 = p.parse().map_err(|_| {
                        Error::Usage(format!("bad method parameter in '{part}'"))
                    })?;
                    (n, Some(value))
                }
                None => (part, None),
            };
            match (name, param) {
                ("fedavg", None) => method = Some(MethodSpec::fedavg()),
                ("fedprox", Some(mu)) => method = Some(MethodSpec::fedprox(mu)),
                ("fedavgm", Some(beta)) => method = Some(MethodSpec::fedavgm(beta)),
                ("fedopt", Some(eta_g)) => method = Some(MethodSpec::fedopt(eta_g)),
                ("fedcos", Some(mu)) => fedcos_mu = mu,
                _ => {
                    return Err(Error::Usage(format!(
                        "unknown method '{part}' (expected fedavg, fedprox:MU, \
                         fedavgm:BETA, fedopt:ETA, fedcos:MU, or base+fedcos:MU)"
                    )))
                }
            }
        }
        let mut m = method.unwrap_or_else(MethodSpec::fedavg);
        m.fedcos_mu = fedcos_mu;
        Ok(m)
    }
}

/// Toy scene start points and quadratics.
pub const TOY_TWO_CLIENT_START: [f64; 2] = [5.1, -3.1];
pub const TOY_THREE_CLIENT_START: [f64; 2] = [4.53, 0.38];

/// f1(x) = 0.5(x0-6)^2 + 0.75(x0-6)x1 + 0.5 x1^2, minimum at (6, 0).
pub fn toy_problem_f1() -> QuadraticProblemSpec {
    QuadraticProblemSpec {
        matrix: vec![vec![1.0, 0.75], vec![0.75, 1.0]],
        center: vec![6.0, 0.0],
    }
}

/// f2(x) = 0.5(x0-3)^2 - 0.5(x0-3)x1 + 0.5 x1^2, minimum at (3, 0).
pub fn toy_problem_f2() -> QuadraticProblemSpec {
    QuadraticProblemSpec {
        matrix: vec![vec![1.0, -0.5], vec![-0.5, 1.0]],
        center: vec![3.0, 0.0],
    }
}

/// Third client for the 3-participant scene; minimum at (4.5, 2).
pub fn toy_problem_f3() -> QuadraticProblemSpec {
    QuadraticProblemSpec {
        matrix: vec![vec![1.0, 0.25], vec![0.25, 1.0]],
        center: vec![4.5, 2.0],
    }
}

fn toy_plan(method: &MethodSpec) -> LocalPlan {
    LocalPlan {
        // K large enough that each client effectively reaches its local
        // optimum within a round, as in the reference trajectories.
        eta: 0.1,
        steps_per_round: 150,
        batch_size: 1,
        penalties: method.penalties(),
    }
}

/// Two quadratic clients from (5.1, -3.1); FedAvg settles near the midpoint
/// (4.5, 0) of the local optima.
pub fn toy_two_client(method: &MethodSpec, rounds: usize, root_seed: u64) -> SimConfig {
    SimConfig {
        name: format!("toy-two-client-{}", method.label()),
        root_seed,
        rounds,
        n_clients: 2,
        participation: 1.0,
        plan: toy_plan(method),
        rule: method.rule(),
        objective: ObjectiveSpec::Quadratics {
            problems: vec![toy_problem_f1(), toy_problem_f2()],
            start: TOY_TWO_CLIENT_START.to_vec(),
        },
        data: DataSpec::None,
        eval_every: 1,
        tracked_pair: (0, 1),
    }
}

/// Three quadratic clients from (4.53, 0.38).
pub fn toy_three_client(method: &MethodSpec, rounds: usize, root_seed: u64) -> SimConfig {
    SimConfig {
        name: format!("toy-three-client-{}", method.label()),
        root_seed,
        rounds,
        n_clients: 3,
        participation: 1.0,
        plan: toy_plan(method),
        rule: method.rule(),
        objective: ObjectiveSpec::Quadratics {
            problems: vec![toy_problem_f1(), toy_problem_f2(), toy_problem_f3()],
            start: TOY_THREE_CLIENT_START.to_vec(),
        },
        data: DataSpec::None,
        eval_every: 1,
        tracked_pair: (0, 1),
    }
}

/// Desk-scale mechanism benchmark: 5 clients, totally non-IID Gaussian
/// blobs, softmax regression, cross-silo.
pub fn noniid_blobs_softmax(method: &MethodSpec, rounds: usize, root_seed: u64) -> SimConfig {
    SimConfig {
        name: format!("blobs-noniid-{}", method.label()),
        root_seed,
        rounds,
        n_clients: 5,
        participation: 1.0,
        plan: LocalPlan {
            eta: 0.05,
            steps_per_round: 10,
            batch_size: 32,
            penalties: method.penalties(),
        },
        rule: method.rule(),
        objective: ObjectiveSpec::Softmax,
        data: DataSpec::Blobs {
            classes: 10,
            per_class: 100,
            dim: 16,
            spread: 1.0,
            eval_per_class: 50,
            partition: PartitionScheme::TotallyNonIid,
        },
        eval_every: 1,
        tracked_pair: (0, 1),
    }
}

/// Every built-in scene, for sweep-style tests (degeneration equivalence).
pub fn builtin_scenes(
    method: &MethodSpec,
    rounds: usize,
    root_seed: u64,
) -> Vec<(&'static str, SimConfig)> {
    vec![
        ("toy_two_client", toy_two_client(method, rounds, root_seed)),
        (
            "toy_three_client",
            toy_three_client(method, rounds, root_seed),
        ),
        (
            "noniid_blobs_softmax",
            noniid_blobs_softmax(method, rounds, root_seed),
        ),
    ]
}
