use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::thread;

use grading_core::config::Config;
use grading_core::episode::{record_episode, Outcome, RecordOptions};
use grading_core::harness::{evaluate, PolicySource};
use grading_core::hmap;
use grading_core::mdp::{Env, WaypointAction};
use grading_core::protocol::{codes, read_frame, write_frame, Client, Message, Server};
use grading_core::scenario::{Family, ScenarioSpec};

fn server() -> std::net::SocketAddr {
    Server::bind("127.0.0.1:0", Config::default()).unwrap().spawn().unwrap().0
}

#[test]
fn malformed_frame_gets_an_error_and_the_session_survives() {
    let mut c = Client::connect(server()).unwrap();
    match c.send_raw(b"{not json").unwrap() {
        Message::Error { code, .. } => assert_eq!(code, codes::MALFORMED),
        other => panic!("{other:?}"),
    }
    let obs = c.reset(3, None).unwrap();
    assert_eq!((obs.rows(), obs.cols()), (75, 75));
    c.close().unwrap();
}

#[test]
fn step_before_reset_and_after_finish() {
    let mut c = Client::connect(server()).unwrap();
    match c.request(&Message::Step { p: [0, 0], s: [0, 0] }).unwrap() {
        Message::Error { code, .. } => assert_eq!(code, codes::NO_SESSION),
        other => panic!("{other:?}"),
    }
    c.reset(0, None).unwrap();
    let r = c.step(WaypointAction::new((-1000, -1000), (0, 0))).unwrap();
    assert!(r.failed);
    match c.request(&Message::Step { p: [0, 0], s: [0, 0] }).unwrap() {
        Message::Error { code, .. } => assert_eq!(code, codes::FINISHED),
        other => panic!("{other:?}"),
    }
    // clients may not send server-side messages
    match c.request(&Message::Error { code: "x".into(), message: "y".into() }).unwrap() {
        Message::Error { code, .. } => assert_eq!(code, codes::UNEXPECTED),
        other => panic!("{other:?}"),
    }
}

#[test]
fn render_returns_world_and_pose() {
    let mut c = Client::connect(server()).unwrap();
    c.reset_family(2, Family::Edge).unwrap();
    let (world, pose) = c.render().unwrap();
    let cfg = Config::default();
    let (env, _) = Env::reset(&cfg, &ScenarioSpec::preset(Family::Edge), 2).unwrap();
    assert_eq!(world, hmap::quantize(&env.delta()));
    let p = env.dozer().pose;
    assert_eq!(pose, [p.x, p.y, p.heading]);
}

#[test]
fn concurrent_sessions_are_isolated() {
    let addr = server();
    let handles: Vec<_> = (0..4u64)
        .map(|seed| {
            thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                c.reset(seed, None).unwrap();
                let cfg = Config::default();
                let (mut env, _) = Env::reset(&cfg, &ScenarioSpec::preset(Family::Init), seed).unwrap();
                let (ar, ac) = env.fov().anchor_pixel();
                for k in 0..3 {
                    let a = WaypointAction::new((ar as i64 + 4 + k, ac as i64), (ar as i64, ac as i64));
                    let remote = c.step(a).unwrap();
                    let local = env.step(a).unwrap();
                    assert_eq!(remote.reward.to_bits(), local.reward.to_bits());
                    assert_eq!(remote.observation, hmap::quantize(&local.observation));
                }
                c.close().unwrap();
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn scenario_can_travel_inline() {
    let mut c = Client::connect(server()).unwrap();
    let spec = ScenarioSpec::flat(Family::Init);
    c.reset(0, Some(&spec)).unwrap();
    match c.request(&Message::Render {}).unwrap() {
        Message::Obs { done, .. } => assert!(done),
        other => panic!("{other:?}"),
    }
    match c.request(&Message::Reset { seed: 0, family: None, scenario: Some("nonsense = 1".into()) }).unwrap() {
        Message::Error { code, .. } => assert_eq!(code, codes::INVALID),
        other => panic!("{other:?}"),
    }
}

/// A remote policy that walks straight ahead twice and then hangs up.
fn spawn_remote_policy() -> (String, thread::JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let h = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut r = BufReader::new(stream.try_clone().unwrap());
        let mut w = BufWriter::new(stream);
        let mut seen = 0;
        while let Some(msg) = read_frame(&mut r).unwrap() {
            match msg {
                Message::Obs { step, .. } => {
                    seen += 1;
                    let reply = if step < 2 {
                        Message::Step { p: [25, 37], s: [18, 37] }
                    } else {
                        Message::Close {}
                    };
                    write_frame(&mut w, &reply).unwrap();
                }
                Message::Close {} => break,
                other => panic!("unexpected {other:?}"),
            }
        }
        seen
    });
    (addr, h)
}

#[test]
fn external_policy_drives_an_episode() {
    let (addr, h) = spawn_remote_policy();
    let cfg = Config::default();
    let mut pol = grading_core::protocol::ExternalPolicy::new(addr);
    let rec = record_episode(&cfg, &ScenarioSpec::preset(Family::Init), 0, &mut pol, RecordOptions::default()).unwrap();
    assert_eq!(rec.steps.len(), 2);
    assert_eq!(rec.outcome, Outcome::Stopped);
    // three decisions plus the final observation
    assert_eq!(h.join().unwrap(), 4);
}

#[test]
fn harness_accepts_an_external_source() {
    let (addr, h) = spawn_remote_policy();
    let t = evaluate(&Config::default(), &ScenarioSpec::preset(Family::Init), &PolicySource::External(addr), 1, 0).unwrap();
    assert_eq!(t.policy, "external");
    assert_eq!(t.rows[0].steps, 2);
    h.join().unwrap();
}
