//! Devices, groups and the phone-number routing map.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{is_valid_imei, is_valid_password};
use crate::ids::{DeviceId, GroupId};
use crate::store::{ordered_u64, Namespace, StoreError, StoreExt, StorePort, WriteBatch};

/// Battery fitted to the locators in the field.
pub const DEFAULT_BATTERY_CAPACITY_MAH: f64 = 850.0;

const NEXT_DEVICE_KEY: &str = "next_device_id";
const NEXT_GROUP_KEY: &str = "next_group_id";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("a device with IMEI {0} is already registered")]
    DuplicateImei(String),
    #[error("a device with phone number {0} is already registered")]
    DuplicatePhoneNumber(String),
    #[error("invalid IMEI {0:?}: expected 15 decimal digits")]
    InvalidImei(String),
    #[error("invalid password: expected exactly six decimal digits")]
    InvalidPassword,
    #[error("invalid phone number {0:?}: expected E.164 such as +60123456789")]
    InvalidPhoneNumber(String),
    #[error("battery capacity must be a positive number of mAh")]
    InvalidCapacity,
    #[error("group name must not be empty")]
    InvalidGroupName,
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl RegistryError {
    /// Request field the error refers to, for validation responses.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            RegistryError::DuplicateImei(_) | RegistryError::InvalidImei(_) => Some("imei"),
            RegistryError::DuplicatePhoneNumber(_) | RegistryError::InvalidPhoneNumber(_) => Some("phone_number"),
            RegistryError::InvalidPassword => Some("password"),
            RegistryError::InvalidCapacity => Some("battery_capacity_mah"),
            RegistryError::InvalidGroupName => Some("name"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: DeviceId,
    pub imei: String,
    pub phone_number: String,
    pub password: String,
    pub battery_capacity_mah: f64,
    pub label: String,
    #[serde(default)]
    pub group_ids: BTreeSet<GroupId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: GroupId,
    pub name: String,
    #[serde(default)]
    pub members: BTreeSet<DeviceId>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NewDevice {
    pub imei: String,
    pub phone_number: String,
    pub password: String,
    #[serde(default)]
    pub battery_capacity_mah: Option<f64>,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DevicePatch {
    pub phone_number: Option<String>,
    pub password: Option<String>,
    pub battery_capacity_mah: Option<f64>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroupPatch {
    pub name: Option<String>,
    pub members: Option<BTreeSet<DeviceId>>,
}

/// Strip the separators people type into phone numbers.
pub fn normalize_phone(number: &str) -> String {
    number
        .chars()
        .filter(|c| !matches!(c, ' ' | '-' | '(' | ')' | '.'))
        .collect()
}

fn is_e164(number: &str) -> bool {
    let Some(digits) = number.strip_prefix('+') else {
        return false;
    };
    (7..=15).contains(&digits.len())
        && digits.bytes().all(|b| b.is_ascii_digit())
        && !digits.starts_with('0')
}

/// In-memory view of devices and groups, written through to the store.
pub struct Registry {
    store: Arc<dyn StorePort>,
    devices: BTreeMap<DeviceId, Device>,
    groups: BTreeMap<GroupId, Group>,
    by_phone: HashMap<String, DeviceId>,
    by_imei: HashMap<String, DeviceId>,
    next_device: u64,
    next_group: u64,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("devices", &self.devices.len())
            .field("groups", &self.groups.len())
            .finish()
    }
}

impl Registry {
    pub fn open(store: Arc<dyn StorePort>) -> Result<Self, RegistryError> {
        let mut devices: BTreeMap<DeviceId, Device> = store
            .scan_json::<Device>(Namespace::Devices)?
            .into_iter()
            .map(|d| (d.id, d))
            .collect();
        let groups: BTreeMap<GroupId, Group> = store
            .scan_json::<Group>(Namespace::Groups)?
            .into_iter()
            .map(|g| (g.id, g))
            .collect();
        // group records are authoritative for membership
        for d in devices.values_mut() {
            d.group_ids.clear();
        }
        for g in groups.values() {
            for m in &g.members {
                if let Some(d) = devices.get_mut(m) {
                    d.group_ids.insert(g.id);
                }
            }
        }
        let by_phone = devices.values().map(|d| (d.phone_number.clone(), d.id)).collect();
        let by_imei = devices.values().map(|d| (d.imei.clone(), d.id)).collect();
        let counter = |key: &str, fallback: u64| -> Result<u64, RegistryError> {
            Ok(store.get_json::<u64>(Namespace::Meta, key)?.unwrap_or(fallback).max(fallback))
        };
        let next_device = counter(NEXT_DEVICE_KEY, devices.keys().last().map_or(1, |d| d.0 + 1))?;
        let next_group = counter(NEXT_GROUP_KEY, groups.keys().last().map_or(1, |g| g.0 + 1))?;
        Ok(Self {
            store,
            devices,
            groups,
            by_phone,
            by_imei,
            next_device,
            next_group,
        })
    }

    pub fn register_device(&mut self, new: NewDevice) -> Result<Device, RegistryError> {
        if !is_valid_imei(&new.imei) {
            return Err(RegistryError::InvalidImei(new.imei));
        }
        let phone = normalize_phone(&new.phone_number);
        if !is_e164(&phone) {
            return Err(RegistryError::InvalidPhoneNumber(new.phone_number));
        }
        if !is_valid_password(&new.password) {
            return Err(RegistryError::InvalidPassword);
        }
        let capacity = new.battery_capacity_mah.unwrap_or(DEFAULT_BATTERY_CAPACITY_MAH);
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(RegistryError::InvalidCapacity);
        }
        if self.by_imei.contains_key(&new.imei) {
            return Err(RegistryError::DuplicateImei(new.imei));
        }
        if self.by_phone.contains_key(&phone) {
            return Err(RegistryError::DuplicatePhoneNumber(phone));
        }

        let device = Device {
            id: DeviceId(self.next_device),
            imei: new.imei,
            phone_number: phone,
            password: new.password,
            battery_capacity_mah: capacity,
            label: new.label,
            group_ids: BTreeSet::new(),
        };
        let mut batch = WriteBatch::new();
        batch.put(Namespace::Devices, ordered_u64(device.id.0), &device)?;
        batch.put(Namespace::Meta, NEXT_DEVICE_KEY, &(self.next_device + 1))?;
        self.store.commit(batch)?;

        self.next_device += 1;
        self.by_imei.insert(device.imei.clone(), device.id);
        self.by_phone.insert(device.phone_number.clone(), device.id);
        self.devices.insert(device.id, device.clone());
        Ok(device)
    }

    pub fn update_device(&mut self, id: DeviceId, patch: DevicePatch) -> Result<Device, RegistryError> {
        let mut device = self.device(id).cloned().ok_or(RegistryError::UnknownDevice(id))?;
        if let Some(phone) = patch.phone_number {
            let normalized = normalize_phone(&phone);
            if !is_e164(&normalized) {
                return Err(RegistryError::InvalidPhoneNumber(phone));
            }
            if self.by_phone.get(&normalized).is_some_and(|other| *other != id) {
                return Err(RegistryError::DuplicatePhoneNumber(normalized));
            }
            device.phone_number = normalized;
        }
        if let Some(password) = patch.password {
            if !is_valid_password(&password) {
                return Err(RegistryError::InvalidPassword);
            }
            device.password = password;
        }
        if let Some(capacity) = patch.battery_capacity_mah {
            if !(capacity.is_finite() && capacity > 0.0) {
                return Err(RegistryError::InvalidCapacity);
            }
            device.battery_capacity_mah = capacity;
        }
        if let Some(label) = patch.label {
            device.label = label;
        }

        self.store
            .put_json(Namespace::Devices, &ordered_u64(id.0), &device)?;
        let old = self.devices.insert(id, device.clone()).expect("device present");
        self.by_phone.remove(&old.phone_number);
        self.by_phone.insert(device.phone_number.clone(), id);
        Ok(device)
    }

    /// Remove a device and its group memberships.
    pub fn delete_device(&mut self, id: DeviceId) -> Result<Device, RegistryError> {
        let device = self.device(id).cloned().ok_or(RegistryError::UnknownDevice(id))?;
        let mut batch = WriteBatch::new();
        batch.delete(Namespace::Devices, ordered_u64(id.0));
        let mut touched = Vec::new();
        for gid in &device.group_ids {
            let mut group = self.groups[gid].clone();
            group.members.remove(&id);
            batch.put(Namespace::Groups, ordered_u64(gid.0), &group)?;
            touched.push(group);
        }
        self.store.commit(batch)?;

        for g in touched {
            self.groups.insert(g.id, g);
        }
        self.devices.remove(&id);
        self.by_phone.remove(&device.phone_number);
        self.by_imei.remove(&device.imei);
        Ok(device)
    }

    pub fn device(&self, id: DeviceId) -> Option<&Device> {
        self.devices.get(&id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn resolve_by_phone(&self, number: &str) -> Option<&Device> {
        let normalized = normalize_phone(number);
        let id = self.by_phone.get(&normalized).or_else(|| {
            // some modems drop the leading '+'
            if normalized.starts_with('+') {
                None
            } else {
                self.by_phone.get(&format!("+{normalized}"))
            }
        })?;
        self.devices.get(id)
    }

    pub fn create_group(&mut self, name: &str, members: BTreeSet<DeviceId>) -> Result<Group, RegistryError> {
        if name.trim().is_empty() {
            return Err(RegistryError::InvalidGroupName);
        }
        if let Some(missing) = members.iter().find(|m| !self.devices.contains_key(m)) {
            return Err(RegistryError::UnknownDevice(*missing));
        }
        let group = Group {
            id: GroupId(self.next_group),
            name: name.to_owned(),
            members,
        };
        let mut batch = WriteBatch::new();
        batch.put(Namespace::Groups, ordered_u64(group.id.0), &group)?;
        batch.put(Namespace::Meta, NEXT_GROUP_KEY, &(self.next_group + 1))?;
        for m in &group.members {
            let mut d = self.devices[m].clone();
            d.group_ids.insert(group.id);
            batch.put(Namespace::Devices, ordered_u64(m.0), &d)?;
        }
        self.store.commit(batch)?;

        self.next_group += 1;
        for m in &group.members {
            self.devices.get_mut(m).expect("checked").group_ids.insert(group.id);
        }
        self.groups.insert(group.id, group.clone());
        Ok(group)
    }

    pub fn update_group(&mut self, id: GroupId, patch: GroupPatch) -> Result<Group, RegistryError> {
        let old = self.group(id).cloned().ok_or(RegistryError::UnknownGroup(id))?;
        let mut group = old.clone();
        if let Some(name) = patch.name {
            if name.trim().is_empty() {
                return Err(RegistryError::InvalidGroupName);
            }
            group.name = name;
        }
        if let Some(members) = patch.members {
            if let Some(missing) = members.iter().find(|m| !self.devices.contains_key(m)) {
                return Err(RegistryError::UnknownDevice(*missing));
            }
            group.members = members;
        }
        self.write_membership(&old, Some(&group))?;
        Ok(group)
    }

    pub fn delete_group(&mut self, id: GroupId) -> Result<Group, RegistryError> {
        let old = self.group(id).cloned().ok_or(RegistryError::UnknownGroup(id))?;
        self.write_membership(&old, None)?;
        Ok(old)
    }

    pub fn add_member(&mut self, group: GroupId, device: DeviceId) -> Result<Group, RegistryError> {
        let mut members = self.group(group).ok_or(RegistryError::UnknownGroup(group))?.members.clone();
        members.insert(device);
        self.update_group(group, GroupPatch { name: None, members: Some(members) })
    }

    pub fn remove_member(&mut self, group: GroupId, device: DeviceId) -> Result<Group, RegistryError> {
        let mut members = self.group(group).ok_or(RegistryError::UnknownGroup(group))?.members.clone();
        members.remove(&device);
        self.update_group(group, GroupPatch { name: None, members: Some(members) })
    }

    fn write_membership(&mut self, old: &Group, new: Option<&Group>) -> Result<(), RegistryError> {
        let empty = BTreeSet::new();
        let new_members = new.map_or(&empty, |g| &g.members);
        let mut changed: Vec<Device> = Vec::new();
        for m in old.members.difference(new_members) {
            if let Some(d) = self.devices.get(m) {
                let mut d = d.clone();
                d.group_ids.remove(&old.id);
                changed.push(d);
            }
        }
        for m in new_members.difference(&old.members) {
            let mut d = self.devices[m].clone();
            d.group_ids.insert(old.id);
            changed.push(d);
        }

        let mut batch = WriteBatch::new();
        match new {
            Some(g) => batch.put(Namespace::Groups, ordered_u64(g.id.0), g).map(|_| ())?,
            None => {
                batch.delete(Namespace::Groups, ordered_u64(old.id.0));
            }
        }
        for d in &changed {
            batch.put(Namespace::Devices, ordered_u64(d.id.0), d)?;
        }
        self.store.commit(batch)?;

        for d in changed {
            self.devices.insert(d.id, d);
        }
        match new {
            Some(g) => self.groups.insert(g.id, g.clone()),
            None => self.groups.remove(&old.id),
        };
        Ok(())
    }

    pub fn group(&self, id: GroupId) -> Option<&Group> {
        self.groups.get(&id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.values()
    }

    pub fn group_members(&self, id: GroupId) -> Result<Vec<&Device>, RegistryError> {
        let group = self.group(id).ok_or(RegistryError::UnknownGroup(id))?;
        Ok(group.members.iter().filter_map(|m| self.devices.get(m)).collect())
    }

    /// Backup as line-delimited JSON: one `{"device":…}` or `{"group":…}` per line.
    pub fn export_records(&self) -> String {
        let mut out = String::new();
        for d in self.devices.values() {
            out.push_str(&serde_json::to_string(&Record::Device(d.clone())).expect("serializable"));
            out.push('\n');
        }
        for g in self.groups.values() {
            out.push_str(&serde_json::to_string(&Record::Group(g.clone())).expect("serializable"));
            out.push('\n');
        }
        out
    }

    /// Load a backup produced by [`Registry::export_records`] into an empty
    /// registry, keeping ids.
    pub fn import_records(&mut self, text: &str) -> Result<usize, RegistryError> {
        let mut devices = Vec::new();
        let mut groups = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: Record = serde_json::from_str(line).map_err(|e| {
                RegistryError::Store(StoreError::Decode {
                    namespace: Namespace::Devices,
                    key: String::new(),
                    reason: e.to_string(),
                })
            })?;
            match rec {
                Record::Device(d) => devices.push(d),
                Record::Group(g) => groups.push(g),
            }
        }
        let mut batch = WriteBatch::new();
        for d in &devices {
            if !is_valid_imei(&d.imei) {
                return Err(RegistryError::InvalidImei(d.imei.clone()));
            }
            if self.by_imei.contains_key(&d.imei) || self.devices.contains_key(&d.id) {
                return Err(RegistryError::DuplicateImei(d.imei.clone()));
            }
            if self.by_phone.contains_key(&d.phone_number) {
                return Err(RegistryError::DuplicatePhoneNumber(d.phone_number.clone()));
            }
            batch.put(Namespace::Devices, ordered_u64(d.id.0), d)?;
        }
        for g in &groups {
            batch.put(Namespace::Groups, ordered_u64(g.id.0), g)?;
        }
        self.store.commit(batch)?;
        let count = devices.len() + groups.len();
        *self = Registry::open(self.store.clone())?;
        Ok(count)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Record {
    Device(Device),
    Group(Group),
}
