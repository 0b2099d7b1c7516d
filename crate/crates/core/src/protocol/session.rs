use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::client::{combine_first_layer, run_client, ClientInputs, ClientOutcome};
use super::coordinator::{run_coordinator, CoordinatorOutcome};
use super::message::{Endpoint, EpochMetrics, SessionSetup};
use super::server::{run_server, ServerInputs, ServerOutcome};
use super::{ModelPartition, PartitionPlan, ProtocolError, Result, TrainConfig};
use crate::fixedpoint::{FixedPointCodec, Ring};
use crate::neural::{AffineLayer, Tensor};
use crate::transport::{inproc_mesh, InProcTransport, Role, TraceLog, Traced, Transport, TransportError};

/// Row-aligned inputs of one session, already split by owner.
#[derive(Clone, Debug)]
pub struct SessionData {
    pub a_train: Tensor,
    pub a_test: Tensor,
    pub b_train: Tensor,
    pub b_test: Tensor,
    pub y_train: Vec<usize>,
    pub y_test: Vec<usize>,
}

impl SessionData {
    pub fn setup(&self, config: &TrainConfig, plan: &PartitionPlan) -> Result<SessionSetup> {
        if self.a_train.rows() != self.b_train.rows() || self.a_train.rows() != self.y_train.len() {
            return Err(ProtocolError::RowCountMismatch("training blocks are not aligned".into()));
        }
        if self.a_test.rows() != self.b_test.rows() || self.a_test.rows() != self.y_test.len() {
            return Err(ProtocolError::RowCountMismatch("test blocks are not aligned".into()));
        }
        Ok(SessionSetup {
            config: config.clone(),
            plan: plan.clone(),
            train_rows: self.a_train.rows(),
            test_rows: self.a_test.rows(),
        })
    }
}

/// Everything one role brings to a session.
#[derive(Clone, Debug)]
pub enum RoleInputs {
    Coordinator(SessionSetup),
    Server(ServerInputs),
    Client(ClientInputs),
}

impl RoleInputs {
    /// Picks out what `role` owns from the full data and initial model.
    pub fn for_role(role: Role, setup: &SessionSetup, data: &SessionData, init: &ModelPartition) -> RoleInputs {
        match role {
            Role::Coordinator => RoleInputs::Coordinator(setup.clone()),
            Role::Server => RoleInputs::Server(ServerInputs {
                first_bias: init.first_bias.clone(),
                first_activation: init.first_activation,
                stack: init.theta_s.clone(),
            }),
            Role::ClientA => RoleInputs::Client(ClientInputs {
                x_train: data.a_train.clone(),
                x_test: data.a_test.clone(),
                labels: Some((data.y_train.clone(), data.y_test.clone())),
                theta: init.theta_a.clone(),
                head: Some(init.theta_y.clone()),
            }),
            Role::ClientB => RoleInputs::Client(ClientInputs {
                x_train: data.b_train.clone(),
                x_test: data.b_test.clone(),
                labels: None,
                theta: init.theta_b.clone(),
                head: None,
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub enum RoleOutcome {
    Coordinator(CoordinatorOutcome),
    Server(ServerOutcome),
    Client(ClientOutcome),
}

/// Runs one role to completion over `transport`. On failure the other
/// roles are sent a `Stop`.
pub fn run_role(transport: &mut dyn Transport, session_id: u64, inputs: RoleInputs) -> Result<RoleOutcome> {
    let mut ep = Endpoint::new(transport, session_id);
    let res = match inputs {
        RoleInputs::Coordinator(setup) => run_coordinator(&mut ep, setup).map(RoleOutcome::Coordinator),
        RoleInputs::Server(s) => run_server(&mut ep, s).map(RoleOutcome::Server),
        RoleInputs::Client(c) => run_client(&mut ep, c).map(RoleOutcome::Client),
    };
    if let Err(e) = &res {
        if !matches!(e, ProtocolError::Stopped(_)) {
            ep.abort(u64::MAX, &e.to_string());
        }
    }
    res
}

#[derive(Clone, Debug)]
pub struct SessionResult {
    pub setup: SessionSetup,
    pub coordinator: CoordinatorOutcome,
    pub server: ServerOutcome,
    pub client_a: ClientOutcome,
    pub client_b: ClientOutcome,
    pub traces: BTreeMap<Role, TraceLog>,
    pub wall_seconds: f64,
}

impl SessionResult {
    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.coordinator.metrics
    }

    pub fn final_test_auc(&self) -> Option<f64> {
        self.metrics().last().and_then(|m| m.test_auc)
    }

    /// The trained parameters, with the first layer reconstructed from the
    /// clients' final states.
    pub fn partition(&self) -> Result<ModelPartition> {
        let cfg = &self.setup.config;
        let codec = FixedPointCodec::new(Ring::new(cfg.ring_bits)?, cfg.frac_bits)?;
        let theta = combine_first_layer(&self.client_a.first_layer, &self.client_b.first_layer, &codec)?;
        let d_a = self.setup.plan.d_a;
        let head: &AffineLayer = self
            .client_a
            .head
            .as_ref()
            .ok_or_else(|| ProtocolError::InvalidConfig("client A has no head".into()))?;
        Ok(ModelPartition {
            theta_a: theta.row_block(0, d_a),
            theta_b: theta.row_block(d_a, theta.rows()),
            first_bias: self.server.first_bias.clone(),
            first_activation: self.setup.plan.activation,
            theta_s: self.server.stack.clone(),
            theta_y: head.clone(),
        })
    }
}

/// How long an in-process role waits for any single frame.
const INPROC_TIMEOUT: Duration = Duration::from_secs(600);

/// Runs a whole session with one thread per role over in-process links.
/// Every role is traced; the server additionally keeps the frames it
/// receives when `capture_server` is set.
pub fn run_inproc(
    config: &TrainConfig,
    plan: &PartitionPlan,
    data: &SessionData,
    init: &ModelPartition,
    capture_server: bool,
) -> Result<SessionResult> {
    let mesh: Mutex<Vec<Option<InProcTransport>>> = Mutex::new(inproc_mesh(INPROC_TIMEOUT).into_iter().map(Some).collect());
    run_session(config, plan, data, init, capture_server, |role| {
        let t = mesh.lock().unwrap()[role.index()].take().ok_or(TransportError::NoRoute(role))?;
        Ok(Box::new(t) as Box<dyn Transport>)
    })
}

/// Runs a whole session with one thread per role. `connect` builds each
/// role's transport on that role's thread.
pub fn run_session<F>(
    config: &TrainConfig,
    plan: &PartitionPlan,
    data: &SessionData,
    init: &ModelPartition,
    capture_server: bool,
    connect: F,
) -> Result<SessionResult>
where
    F: Fn(Role) -> std::result::Result<Box<dyn Transport>, TransportError> + Sync,
{
    config.validate()?;
    let setup = data.setup(config, plan)?;
    let session = config.session_id;
    let start = Instant::now();
    let connect = &connect;
    let results: Vec<(Role, std::thread::Result<(Result<RoleOutcome>, TraceLog)>)> = std::thread::scope(|s| {
        let handles: Vec<_> = Role::ALL
            .into_iter()
            .map(|role| {
                let inputs = RoleInputs::for_role(role, &setup, data, init);
                let h = std::thread::Builder::new()
                    .name(role.name().to_string())
                    .spawn_scoped(s, move || {
                        let t = match connect(role) {
                            Ok(t) => t,
                            Err(e) => return (Err(e.into()), TraceLog::default()),
                        };
                        let mut traced = Traced::new(t, capture_server && role == Role::Server);
                        traced.restart_clock();
                        let out = run_role(&mut traced, session, inputs);
                        (out, traced.into_log())
                    })
                    .expect("spawn role thread");
                (role, h)
            })
            .collect();
        handles.into_iter().map(|(r, h)| (r, h.join())).collect()
    });
    let wall_seconds = start.elapsed().as_secs_f64();

    let mut outcomes = BTreeMap::new();
    let mut traces = BTreeMap::new();
    let mut errors = Vec::new();
    for (role, res) in results {
        match res {
            Ok((Ok(out), log)) => {
                outcomes.insert(role, out);
                traces.insert(role, log);
            }
            Ok((Err(e), _)) => errors.push(e),
            Err(_) => errors.push(ProtocolError::RolePanicked(role)),
        }
    }
    if !errors.is_empty() {
        let secondary = |e: &ProtocolError| {
            matches!(
                e,
                ProtocolError::Stopped(_) | ProtocolError::Transport(TransportError::PeerClosed(_))
            )
        };
        let root = errors.iter().position(|e| !secondary(e)).unwrap_or(0);
        return Err(errors.swap_remove(root));
    }
    let mut take = |r: Role| outcomes.remove(&r).expect("every role finished");
    let (RoleOutcome::Coordinator(coordinator), RoleOutcome::Server(server), RoleOutcome::Client(client_a), RoleOutcome::Client(client_b)) =
        (take(Role::Coordinator), take(Role::Server), take(Role::ClientA), take(Role::ClientB))
    else {
        unreachable!("outcomes are keyed by role");
    };
    Ok(SessionResult {
        setup,
        coordinator,
        server,
        client_a,
        client_b,
        traces,
        wall_seconds,
    })
}
