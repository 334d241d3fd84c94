//! Airtime of frames, energy of radio-state intervals and control overhead.

use alloc::collections::BTreeMap;

use crate::frame_codec::{
    Frame, RoutingFrame, WakeUpFrame, DEFAULT_CARRIER_BYTES, DEFAULT_PREAMBLE_BYTES, MAC_ACK_LEN,
    MAC_DATA_HEADER, PATTERN_BYTES, ROUTING_LEN, WUC_ACK_LEN,
};

/// Radio framing bytes (preamble, sync word, length) the main radio puts in
/// front of a wake-up image. Counted as control overhead only.
pub const WUC_RADIO_FRAMING_BYTES: usize = 8;

/// Packet airtimes of the main radio, in microseconds. Every figure
/// includes the calibration that precedes transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RadioTimingModel {
    pub bitrate_main_kbps: u32,
    pub calibration_us: u64,
    pub hw_framing_us: u64,
    /// Default-length wake-up call.
    pub wuc_total_us: u64,
    pub wuc_tx_us: u64,
    /// Any MAC frame without payload (DATA header, ACK, WUC ACK).
    pub mac_packet_us: u64,
    /// MAC DATA carrying a bare routing frame.
    pub routing_packet_us: u64,
    pub payload_us_per_byte: u64,
    pub payload_us_max: u64,
}

impl Default for RadioTimingModel {
    fn default() -> Self {
        Self {
            bitrate_main_kbps: 250,
            calibration_us: 799,
            hw_framing_us: 991,
            wuc_total_us: 6143,
            wuc_tx_us: 5344,
            mac_packet_us: 1247,
            routing_packet_us: 1375,
            payload_us_per_byte: 32,
            payload_us_max: 7872,
        }
    }
}

impl RadioTimingModel {
    pub fn wuc_us(&self, wuc: &WakeUpFrame) -> u64 {
        let default_len = DEFAULT_CARRIER_BYTES + DEFAULT_PREAMBLE_BYTES + PATTERN_BYTES;
        let delta = wuc.image_len() as i64 - default_len as i64;
        (self.wuc_total_us as i64 + delta * self.payload_us_per_byte as i64) as u64
    }

    /// MAC DATA whose payload is `n` bytes long.
    pub fn mac_data_us(&self, n: usize) -> u64 {
        self.mac_packet_us + self.payload_us_per_byte * n as u64
    }

    /// Routed data packet with `n` application bytes.
    pub fn routed_data_us(&self, n: usize) -> u64 {
        self.routing_packet_us + self.payload_us_per_byte * n as u64
    }

    pub fn frame_airtime(&self, frame: &Frame) -> u64 {
        match frame {
            Frame::Wuc(w) => self.wuc_us(w),
            Frame::WucAck(_) | Frame::Ack(_) => self.mac_packet_us,
            Frame::Data(d) => self.mac_data_us(d.payload.len()),
            Frame::Routed { payload, .. } => self.routed_data_us(payload.len()),
        }
    }
}

/// Transmit/receive currents and the supply voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub voltage_v: f64,
    pub i_tx_wuc_ma: f64,
    pub i_tx_data_ma: f64,
    pub i_rx_ma: f64,
    pub i_cal_ma: f64,
    pub i_mcu_run_ma: f64,
    pub i_sleep_ua: f64,
    pub i_wurx_ua: f64,
    /// Average fraction of the transmit current drawn while sending the
    /// on/off-keyed wake-up image.
    pub manchester_tx_derating: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            voltage_v: 3.3,
            i_tx_wuc_ma: 34.2,
            i_tx_data_ma: 16.4,
            i_rx_ma: 16.9,
            i_cal_ma: 8.4,
            i_mcu_run_ma: 4.0,
            i_sleep_ua: 0.9,
            i_wurx_ua: 3.0,
            manchester_tx_derating: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum EnergyError {
    #[error("energy model field {0} must be positive")]
    NonPositive(&'static str),
    #[error("derating {0} outside (0, 1]")]
    Derating(f64),
    #[error("node {node}: interval starting at {start_us} µs overlaps the previous one")]
    OverlappingIntervals { node: u8, start_us: u64 },
    #[error("no data bits delivered")]
    ZeroData,
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let fields = [
            ("voltage_v", self.voltage_v),
            ("i_tx_wuc_ma", self.i_tx_wuc_ma),
            ("i_tx_data_ma", self.i_tx_data_ma),
            ("i_rx_ma", self.i_rx_ma),
            ("i_cal_ma", self.i_cal_ma),
            ("i_mcu_run_ma", self.i_mcu_run_ma),
            ("i_sleep_ua", self.i_sleep_ua),
            ("i_wurx_ua", self.i_wurx_ua),
        ];
        for (name, v) in fields {
            if v.is_nan() || v <= 0.0 {
                return Err(EnergyError::NonPositive(name));
            }
        }
        let d = self.manchester_tx_derating;
        if !(d > 0.0 && d <= 1.0) {
            return Err(EnergyError::Derating(d));
        }
        Ok(())
    }

    /// Node current in `state`, in mA.
    pub fn current_ma(&self, state: RadioState) -> f64 {
        match state {
            RadioState::TxWuc => self.i_tx_wuc_ma * self.manchester_tx_derating + self.i_mcu_run_ma,
            RadioState::TxData => self.i_tx_data_ma + self.i_mcu_run_ma,
            RadioState::Rx => self.i_rx_ma + self.i_mcu_run_ma,
            RadioState::Calibrate => self.i_cal_ma + self.i_mcu_run_ma,
            RadioState::DelayIdle => self.i_mcu_run_ma,
            RadioState::Sleep => (self.i_sleep_ua + self.i_wurx_ua) / 1000.0,
        }
    }

    /// Energy in mJ of `duration_us` spent in `state`.
    pub fn energy_mj(&self, state: RadioState, duration_us: f64) -> f64 {
        self.voltage_v * self.current_ma(state) * duration_us * 1e-6
    }

    pub fn interval_energy(&self, iv: &RadioStateInterval) -> f64 {
        self.energy_mj(iv.state, iv.duration_us() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RadioState {
    TxWuc,
    TxData,
    Rx,
    Calibrate,
    DelayIdle,
    Sleep,
}

impl RadioState {
    pub fn as_str(self) -> &'static str {
        match self {
            RadioState::TxWuc => "TX_WUC",
            RadioState::TxData => "TX_DATA",
            RadioState::Rx => "RX",
            RadioState::Calibrate => "CALIBRATE",
            RadioState::DelayIdle => "DELAY_IDLE",
            RadioState::Sleep => "SLEEP",
        }
    }
}

/// What a node was doing, independent of the radio state. Frame preparation
/// and calibration count toward the frame they precede.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activity {
    Wuc,
    Delay,
    Receive,
    Send,
    Sleep,
}

impl Activity {
    pub const ALL: [Activity; 5] =
        [Activity::Wuc, Activity::Delay, Activity::Receive, Activity::Send, Activity::Sleep];

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Wuc => "WUC",
            Activity::Delay => "Delay",
            Activity::Receive => "Receive",
            Activity::Send => "Send",
            Activity::Sleep => "Sleep",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RadioStateInterval {
    pub node_id: u8,
    pub state: RadioState,
    pub activity: Activity,
    pub start_us: u64,
    pub end_us: u64,
}

impl RadioStateInterval {
    pub fn duration_us(&self) -> u64 {
        self.end_us - self.start_us
    }
}

/// Time and energy a node spent in each activity.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Breakdown {
    pub time_us: [u64; 5],
    pub energy_mj: [f64; 5],
}

impl Breakdown {
    pub fn time(&self, a: Activity) -> u64 {
        self.time_us[a.index()]
    }

    pub fn energy(&self, a: Activity) -> f64 {
        self.energy_mj[a.index()]
    }

    pub fn total_time_us(&self) -> u64 {
        self.time_us.iter().sum()
    }

    pub fn total_energy_mj(&self) -> f64 {
        self.energy_mj.iter().sum()
    }

    /// Energy outside of sleep.
    pub fn active_energy_mj(&self) -> f64 {
        self.total_energy_mj() - self.energy(Activity::Sleep)
    }

    pub fn active_time_us(&self) -> u64 {
        self.total_time_us() - self.time(Activity::Sleep)
    }
}

/// Groups intervals per node and activity.
///
/// Intervals of a node must not overlap; they may arrive in any order.
pub fn classify_trace(
    intervals: &[RadioStateInterval],
    em: &EnergyModel,
) -> Result<BTreeMap<u8, Breakdown>, EnergyError> {
    let mut per_node: BTreeMap<u8, alloc::vec::Vec<&RadioStateInterval>> = BTreeMap::new();
    for iv in intervals {
        per_node.entry(iv.node_id).or_default().push(iv);
    }
    let mut out = BTreeMap::new();
    for (node, mut ivs) in per_node {
        ivs.sort_by_key(|iv| (iv.start_us, iv.end_us));
        let mut b = Breakdown::default();
        let mut last_end = 0u64;
        for (k, iv) in ivs.iter().enumerate() {
            if k > 0 && iv.start_us < last_end {
                return Err(EnergyError::OverlappingIntervals { node, start_us: iv.start_us });
            }
            last_end = iv.end_us;
            let i = iv.activity.index();
            b.time_us[i] += iv.duration_us();
            b.energy_mj[i] += em.interval_energy(iv);
        }
        out.insert(node, b);
    }
    Ok(out)
}

/// Control bytes and application bytes a frame puts on the air.
///
/// A wake-up call counts its whole image plus the radio framing in front
/// of it; main-radio frames count their MAC and routing headers.
pub fn frame_bytes(frame: &Frame) -> (usize, usize) {
    match frame {
        Frame::Wuc(w) => (w.image_len() + WUC_RADIO_FRAMING_BYTES, 0),
        Frame::WucAck(_) => (WUC_ACK_LEN, 0),
        Frame::Ack(_) => (MAC_ACK_LEN, 0),
        Frame::Data(d) => (MAC_DATA_HEADER, d.payload.len()),
        Frame::Routed { routing: RoutingFrame::Data { .. }, payload, .. } => {
            (MAC_DATA_HEADER + ROUTING_LEN, payload.len())
        }
        Frame::Routed { .. } => (MAC_DATA_HEADER + ROUTING_LEN, 0),
    }
}

/// Control bits sent per data bit delivered.
pub fn overhead_ratio(control_bits: u64, data_bits_delivered: u64) -> Result<f64, EnergyError> {
    if data_bits_delivered == 0 {
        return Err(EnergyError::ZeroData);
    }
    Ok(control_bits as f64 / data_bits_delivered as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_codec::{MacAckFrame, MacDataFrame, WakeUpAddress};
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn timing_constants_are_consistent() {
        let t = RadioTimingModel::default();
        assert_eq!(t.wuc_total_us, t.wuc_tx_us + t.calibration_us);
        assert_eq!(t.payload_us_per_byte * 246, t.payload_us_max);
        assert_eq!(t.mac_data_us(ROUTING_LEN), t.routing_packet_us);
    }

    #[test]
    fn airtimes() {
        let t = RadioTimingModel::default();
        let wuc = Frame::Wuc(WakeUpFrame::new(WakeUpAddress::new(3)));
        assert_eq!(t.frame_airtime(&wuc), 6143);
        assert_eq!(t.frame_airtime(&Frame::Ack(MacAckFrame { src: 1, dest: 2 })), 1247);
        let rdata = Frame::Routed {
            src: 13,
            dest: 10,
            routing: RoutingFrame::Data { src: 13, dest: 10, payload_len: 100 },
            payload: vec![0; 100],
        };
        assert_eq!(t.frame_airtime(&rdata), 4575);
        let data = Frame::Data(MacDataFrame { src: 1, dest: 2, payload: vec![0; 100] });
        assert_eq!(t.frame_airtime(&data), 4447);
    }

    #[test]
    fn interval_energies() {
        let em = EnergyModel::default();
        let e = em.energy_mj(RadioState::Sleep, 1e6);
        assert!(close(e, 3.3 * 3.9e-3, 1e-12));
        let e = em.energy_mj(RadioState::TxData, 1247.0);
        assert!(close(e, 3.3 * 20.4 * 1.247e-3, 1e-12));
        assert!(close(em.current_ma(RadioState::TxWuc), 34.2 * 0.5 + 4.0, 1e-12));
    }

    #[test]
    fn model_validation() {
        let mut em = EnergyModel::default();
        assert!(em.validate().is_ok());
        em.manchester_tx_derating = 0.0;
        assert_eq!(em.validate(), Err(EnergyError::Derating(0.0)));
        em.manchester_tx_derating = 1.0;
        em.i_rx_ma = -1.0;
        assert_eq!(em.validate(), Err(EnergyError::NonPositive("i_rx_ma")));
    }

    #[test]
    fn default_wuc_counts_162_control_bytes() {
        let wuc = Frame::Wuc(WakeUpFrame::new(WakeUpAddress::new(3)));
        assert_eq!(frame_bytes(&wuc), (162, 0));
    }

    #[test]
    fn ratio() {
        assert_eq!(overhead_ratio(1000, 1000), Ok(1.0));
        assert_eq!(overhead_ratio(5, 0), Err(EnergyError::ZeroData));
    }

    #[test]
    fn classify_empty_and_overlap() {
        let em = EnergyModel::default();
        assert!(classify_trace(&[], &em).unwrap().is_empty());
        let a = RadioStateInterval {
            node_id: 1,
            state: RadioState::Rx,
            activity: Activity::Receive,
            start_us: 0,
            end_us: 10,
        };
        let b = RadioStateInterval { start_us: 5, end_us: 20, ..a };
        assert!(matches!(
            classify_trace(&[a, b], &em),
            Err(EnergyError::OverlappingIntervals { node: 1, start_us: 5 })
        ));
    }
}
