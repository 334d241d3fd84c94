//! Pinned report schemas. A column change must show up here first.

use trome_lab::experiments::{analyze, budget, overhead, simulate};
use trome_lab::report::{csv_string, CheckRow};
use trome_lab::scenario::Scenario;

fn header<T: serde::Serialize>(rows: &[T]) -> String {
    csv_string(rows).unwrap().lines().next().unwrap_or_default().to_string()
}

fn small() -> Scenario {
    Scenario { nodes: vec![2], payloads: vec![100, 200], ..Scenario::default() }
}

#[test]
fn analyze_columns() {
    let rows = analyze(&small()).unwrap();
    assert_eq!(
        header(&rows),
        "protocol,m,p,q,n_packets,expected_time_us,expected_energy_mJ,ratio_vs_naive,energy_ratio_vs_naive"
    );
    let keys: Vec<_> = rows.iter().map(|r| r.protocol).collect();
    assert_eq!(keys, ["ctpwur", "naive", "trome"]);
}

#[test]
fn simulate_columns() {
    let rows = simulate(&small(), None).unwrap();
    assert_eq!(
        header(&rows),
        "protocol,m,p,q,n_packets,payload_bytes,loss_mode,seed,runs,complete_runs,permanent_failures,\
         mean_delivery_us,mean_completion_us,stderr_completion_us,mean_energy_mJ,stderr_energy_mJ,\
         mean_control_bits,o_cd,expected_time_us,ratio_vs_naive"
    );
}

#[test]
fn budget_columns() {
    let rows = budget(&Scenario { protocols: vec!["trome".into()], ..small() }).unwrap();
    assert_eq!(header(&rows), "protocol,m,n_packets,payload_bytes,node_id,role,state,time_us,energy_mJ");
    let states: Vec<_> = rows.iter().take(6).map(|r| r.state).collect();
    assert_eq!(states, ["WUC", "Delay", "Receive", "Send", "Sleep", "total"]);
    assert_eq!(rows.len(), 2 * 6);
}

#[test]
fn overhead_columns() {
    let (curves, even) = overhead(&Scenario { protocols: vec!["naive".into()], ..small() }).unwrap();
    assert_eq!(header(&curves), "protocol,m,n_packets,payload_bytes,control_bits,data_bits,o_cd");
    assert_eq!(header(&even), "protocol,m,break_even_bytes");
    assert_eq!(csv_string(&even).unwrap(), "protocol,m,break_even_bytes\nnaive,2,169\n");
}

#[test]
fn verify_columns() {
    let row = CheckRow { id: "1".into(), check: "c".into(), measured: "m".into(), target: "t".into(), pass: true };
    assert_eq!(csv_string(&[row]).unwrap(), "id,check,measured,target,pass\n1,c,m,t,true\n");
}
