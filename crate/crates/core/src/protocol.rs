//! JSON wire protocol, one message per WebSocket text frame.

use serde::{Deserialize, Serialize};

use crate::model::{Fixation, GazeSample, LayoutManifest, Saccade, Vec3, ViewportState, WordMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Layout,
    Viewer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabState {
    Visible,
    Hidden,
    Closed,
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeMessage {
    pub t_us: i64,
    pub sx: f64,
    pub sy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec3>,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub valid: bool,
}

impl From<&GazeMessage> for GazeSample {
    fn from(m: &GazeMessage) -> Self {
        GazeSample { t_us: m.t_us, screen_x: m.sx, screen_y: m.sy, origin_3d: m.origin, pos_3d: m.pos, valid: m.valid }
    }
}

impl From<&GazeSample> for GazeMessage {
    fn from(s: &GazeSample) -> Self {
        GazeMessage { t_us: s.t_us, sx: s.screen_x, sy: s.screen_y, origin: s.origin_3d, pos: s.pos_3d, valid: s.valid }
    }
}

/// Messages sent by sources, layout clients and viewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
        #[serde(default)]
        participant: String,
    },
    Gaze(GazeMessage),
    Layout(LayoutManifest),
    Viewport(ViewportState),
    Tabstate {
        state: TabState,
    },
    End,
}

/// Messages pushed to viewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Snapshot { manifest: Option<LayoutManifest>, metrics: Vec<WordMetrics> },
    FixationEnd(Fixation),
    Saccade(Saccade),
    MetricsUpdate { word_index: usize, metrics: WordMetrics },
    Error { message: String },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }
}

impl ServerMessage {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wire_shapes() {
        let hello =
            ClientMessage::parse(r#"{"type":"hello","role":"source","session":"S","participant":"p1"}"#).unwrap();
        assert_eq!(
            hello,
            ClientMessage::Hello { role: Role::Source, session: Some("S".into()), participant: "p1".into() }
        );
        let gaze = ClientMessage::parse(
            r#"{"type":"gaze","t_us":3333,"sx":10.5,"sy":20,"origin":[1,2,3],"pos":[4,5,6],"valid":true}"#,
        )
        .unwrap();
        match &gaze {
            ClientMessage::Gaze(g) => {
                assert_eq!(g.t_us, 3333);
                assert_eq!(g.pos, Some([4.0, 5.0, 6.0]));
            }
            m => panic!("{m:?}"),
        }
        let vp = ClientMessage::parse(
            r#"{"type":"viewport","t_us":0,"win_x":0,"win_y":0,"scroll_x":0,"scroll_y":400,"dpr":1}"#,
        )
        .unwrap();
        assert!(matches!(vp, ClientMessage::Viewport(v) if v.scroll_y == 400.0));
        assert_eq!(
            ClientMessage::parse(r#"{"type":"tabstate","state":"hidden"}"#).unwrap(),
            ClientMessage::Tabstate { state: TabState::Hidden }
        );
        assert_eq!(ClientMessage::parse(r#"{"type":"end"}"#).unwrap(), ClientMessage::End);
        assert_eq!(ClientMessage::End.to_json(), r#"{"type":"end"}"#);
        let layout = ClientMessage::parse(
            r#"{"type":"layout","url":"u","page_text":"a","words":[{"i":0,"char":0,"sent":0,"para":0,"text":"a","box":[0,0,5,5]}],"paragraphs":[{"id":0,"box":[0,0,5,5]}],"media":[]}"#,
        )
        .unwrap();
        assert!(matches!(layout, ClientMessage::Layout(m) if m.words.len() == 1));
        assert!(ClientMessage::parse(r#"{"type":"bogus"}"#).is_err());
    }

    #[test]
    fn server_message_tags() {
        let m = ServerMessage::MetricsUpdate { word_index: 7, metrics: WordMetrics::empty(7) };
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["type"], "metrics_update");
        assert_eq!(v["metrics"]["TFD"], 0);
        let f = ServerMessage::FixationEnd(Fixation::new(0, 10, None, 2));
        let v: serde_json::Value = serde_json::from_str(&f.to_json()).unwrap();
        assert_eq!(v["type"], "fixation_end");
        assert_eq!(v["duration_us"], 10);
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6..1e6f64, (-100_000i64..100_000).prop_map(|v| v as f64)]
    }

    fn client_message() -> impl Strategy<Value = ClientMessage> {
        prop_oneof![
            (any::<i64>(), finite(), finite(), prop::option::of([finite(), finite(), finite()]), any::<bool>())
                .prop_map(|(t_us, sx, sy, o, valid)| ClientMessage::Gaze(GazeMessage {
                    t_us,
                    sx,
                    sy,
                    origin: o,
                    pos: o.map(|v| [v[0] + 1.0, v[1], v[2]]),
                    valid
                })),
            (any::<i64>(), finite(), finite(), finite(), finite(), 0.1..4.0f64).prop_map(
                |(t_us, win_x, win_y, scroll_x, scroll_y, dpr)| ClientMessage::Viewport(ViewportState {
                    t_us,
                    win_x,
                    win_y,
                    scroll_x,
                    scroll_y,
                    dpr
                })
            ),
            ("[a-z]{0,8}", prop::option::of("[A-Za-z0-9-]{1,12}")).prop_map(|(p, s)| ClientMessage::Hello {
                role: Role::Viewer,
                session: s,
                participant: p
            }),
            Just(ClientMessage::End),
            Just(ClientMessage::Tabstate { state: TabState::Closed }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(m in client_message()) {
            let text = m.to_json();
            let parsed = ClientMessage::parse(&text).unwrap();
            prop_assert_eq!(&parsed, &m);
            prop_assert_eq!(parsed.to_json(), text);
        }
    }
}
