//! Declarative screen descriptions used by the simulated device.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && py >= self.y && px - self.x < self.w && py - self.y < self.h
    }

    pub fn center(&self) -> (u32, u32) {
        (self.x + self.w / 2, self.y + self.h / 2)
    }

    fn within(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ButtonAction {
    /// Dismisses the first-launch onboarding of the foreground app.
    CompleteOnboarding,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    AppIcon {
        app: String,
    },
    TextField {
        /// Workload started when the field is submitted with Enter.
        #[serde(default)]
        on_submit: Option<String>,
    },
    Scrollable {
        content_height: u32,
    },
    Button {
        action: ButtonAction,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub id: String,
    pub rect: Rect,
    #[serde(flatten)]
    pub kind: TargetKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub targets: Vec<Target>,
    /// Text field focused when the scene first shows.
    #[serde(default)]
    pub focused: Option<String>,
}

/// Mutable per-scene state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneState {
    pub scroll: BTreeMap<String, u32>,
    pub fields: BTreeMap<String, String>,
    pub focused: Option<String>,
    pub submitted: Vec<String>,
}

impl Scene {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), String> {
        for t in &self.targets {
            if !t.rect.within(width, height) {
                return Err(format!("target {:?} lies outside the {width}x{height} screen", t.id));
            }
        }
        if let Some(f) = &self.focused {
            match self.target(f) {
                Some(Target { kind: TargetKind::TextField { .. }, .. }) => {}
                _ => return Err(format!("focused target {f:?} is not a text field")),
            }
        }
        Ok(())
    }

    pub fn target(&self, id: &str) -> Option<&Target> {
        self.targets.iter().find(|t| t.id == id)
    }

    /// Topmost target under the point; later targets draw over earlier ones.
    pub fn hit(&self, x: u32, y: u32) -> Option<&Target> {
        self.targets.iter().rev().find(|t| t.rect.contains(x, y))
    }

    pub fn icon_for(&self, app: &str) -> Option<&Target> {
        self.targets.iter().find(|t| matches!(&t.kind, TargetKind::AppIcon { app: a } if a == app))
    }

    pub fn initial_state(&self) -> SceneState {
        SceneState { focused: self.focused.clone(), ..SceneState::default() }
    }

    /// Launcher grid: four icons per row, one row per 1/6 of the screen.
    pub fn home_grid<'a>(apps: impl IntoIterator<Item = &'a str>, width: u32, height: u32) -> Scene {
        let cell_w = width / 4;
        let cell_h = height / 6;
        let icon = cell_w.min(cell_h) * 3 / 5;
        let targets = apps
            .into_iter()
            .enumerate()
            .take(24)
            .map(|(i, app)| {
                let (col, row) = ((i % 4) as u32, (i / 4) as u32);
                let x = col * cell_w + (cell_w - icon) / 2;
                let y = row * cell_h + (cell_h - icon) / 2;
                Target { id: format!("icon:{app}"), rect: Rect::new(x, y, icon, icon), kind: TargetKind::AppIcon { app: app.to_string() } }
            })
            .collect();
        Scene { targets, focused: None }
    }

    /// Browser layout: URL bar on top, page content below, onboarding button centered.
    pub fn browser(width: u32, height: u32) -> Scene {
        let bar_h = height / 12;
        let content_h = height - bar_h;
        Scene {
            targets: vec![
                Target {
                    id: "content".into(),
                    rect: Rect::new(0, bar_h, width, content_h),
                    kind: TargetKind::Scrollable { content_height: content_h * 8 },
                },
                Target {
                    id: "url_bar".into(),
                    rect: Rect::new(width / 20, bar_h / 6, width - width / 10, bar_h * 2 / 3),
                    kind: TargetKind::TextField { on_submit: Some(PAGE_LOAD_WORKLOAD.into()) },
                },
                Target {
                    id: "onboarding_accept".into(),
                    rect: Rect::new(width / 4, height * 3 / 4, width / 2, height / 12),
                    kind: TargetKind::Button { action: ButtonAction::CompleteOnboarding },
                },
            ],
            focused: None,
        }
    }
}

/// Workload name bound to the browser URL bar.
pub const PAGE_LOAD_WORKLOAD: &str = "page_load";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenes_fit_screen() {
        for (w, h) in [(720, 1280), (750, 1334), (1080, 1920)] {
            Scene::browser(w, h).validate(w, h).unwrap();
            Scene::home_grid(["a", "b", "c", "d", "e"], w, h).validate(w, h).unwrap();
        }
    }

    #[test]
    fn hit_prefers_top_target() {
        let scene = Scene::browser(720, 1280);
        let (x, y) = scene.target("url_bar").unwrap().rect.center();
        assert_eq!(scene.hit(x, y).unwrap().id, "url_bar");
        assert_eq!(scene.hit(360, 600).unwrap().id, "content");
    }

    #[test]
    fn out_of_screen_target_rejected() {
        let scene = Scene {
            targets: vec![Target { id: "x".into(), rect: Rect::new(700, 0, 40, 10), kind: TargetKind::Button { action: ButtonAction::None } }],
            focused: None,
        };
        assert!(scene.validate(720, 1280).is_err());
    }
}
