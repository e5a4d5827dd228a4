//! Team roles and the fixed permission matrix.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Owner,
    Manager,
    Member,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    AddRemoveManager,
    AddRemoveMember,
    AddDeleteProject,
    ImportFile,
    ProjectSettings,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::AddRemoveManager,
        Action::AddRemoveMember,
        Action::AddDeleteProject,
        Action::ImportFile,
        Action::ProjectSettings,
    ];
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Owner, Role::Manager, Role::Member];
}

/// Owner may do everything, Manager everything except managing managers,
/// Member only imports files.
pub const fn allowed(role: Role, action: Action) -> bool {
    match role {
        Role::Owner => true,
        Role::Manager => !matches!(action, Action::AddRemoveManager),
        Role::Member => matches!(action, Action::ImportFile),
    }
}

/// Lookup for a possibly absent role; non-members are always denied.
pub fn check_permission(role: Option<Role>, action: Action) -> bool {
    role.is_some_and(|r| allowed(r, action))
}
