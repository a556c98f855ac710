"""User classes, users, rights, preferences, and personal aliases.

A class profile carries the flat allow-set of permissions (bip method ids
and data capabilities like "flight.update") plus the id of the task model
serving that class.  A user profile binds a user to a class and holds
preferences and personal names for data items: alias -> canonical, with no
alias-to-alias chains so resolution is idempotent.

Rights are class-only; absence means deny.  Reads are thread-safe and
mutations are atomic per record.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AliasChain, ProfileFormatError, UnknownUser


@dataclass
class ClassProfile:
    class_id: str
    task_model_id: str
    rights: set[str] = field(default_factory=set)


@dataclass
class UserProfile:
    user_id: str
    class_id: str
    preferences: dict[str, str] = field(default_factory=dict)
    aliases: dict[str, str] = field(default_factory=dict)


class ProfileStore:
    def __init__(self):
        self._lock = threading.RLock()
        self._classes: dict[str, ClassProfile] = {}
        self._users: dict[str, UserProfile] = {}

    def load_profiles(self, path: str | Path) -> int:
        """Load a {classes, users} JSON document; upsert by id, so loading
        the same file twice leaves the store unchanged.  Returns the record
        count."""
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ProfileFormatError(str(exc))
        return self.load_dict(doc)

    def load_dict(self, doc: dict) -> int:
        if not isinstance(doc, dict):
            raise ProfileFormatError("profile document must be an object")
        classes = doc.get("classes", [])
        users = doc.get("users", [])
        new_classes: dict[str, ClassProfile] = {}
        for rec in classes:
            try:
                profile = ClassProfile(class_id=rec["class_id"],
                                       task_model_id=rec["task_model_id"],
                                       rights=set(rec.get("rights", [])))
            except (KeyError, TypeError) as exc:
                raise ProfileFormatError(f"bad class record: {exc}")
            new_classes[profile.class_id] = profile
        new_users: dict[str, UserProfile] = {}
        for rec in users:
            try:
                profile = UserProfile(user_id=rec["user_id"],
                                      class_id=rec["class_id"],
                                      preferences=dict(rec.get("preferences", {})),
                                      aliases=dict(rec.get("aliases", {})))
            except (KeyError, TypeError) as exc:
                raise ProfileFormatError(f"bad user record: {exc}")
            if (profile.class_id not in new_classes
                    and profile.class_id not in self._classes):
                raise ProfileFormatError(
                    f"user {profile.user_id!r} references unknown class "
                    f"{profile.class_id!r}")
            _check_alias_map(profile.user_id, profile.aliases)
            new_users[profile.user_id] = profile
        with self._lock:
            self._classes.update(new_classes)
            self._users.update(new_users)
        return len(new_classes) + len(new_users)

    def get_user(self, user_id: str) -> UserProfile:
        with self._lock:
            user = self._users.get(user_id)
            if user is None:
                raise UnknownUser(user_id)
            return user

    def get_class(self, class_id: str) -> ClassProfile | None:
        with self._lock:
            return self._classes.get(class_id)

    def class_of(self, user_id: str) -> ClassProfile:
        user = self.get_user(user_id)
        with self._lock:
            return self._classes[user.class_id]

    def check_right(self, user_id: str, permission: str) -> bool:
        """Allow iff the permission is in the user's class allow-set."""
        return permission in self.class_of(user_id).rights

    def resolve_alias(self, user_id: str, name: str) -> str:
        """Personal name -> canonical name; unknown names pass through."""
        user = self.get_user(user_id)
        with self._lock:
            return user.aliases.get(name, name)

    def set_alias(self, user_id: str, name: str, target: str) -> None:
        user = self.get_user(user_id)
        with self._lock:
            if target in user.aliases:
                raise AliasChain(f"{target!r} is itself an alias")
            if name != target and name in set(user.aliases.values()):
                raise AliasChain(f"{name!r} is already the target of an alias")
            user.aliases[name] = target

    def personalize_map(self, user_id: str) -> dict[str, str]:
        """canonical -> personal name, for rendering.  When several aliases
        share a target the lexically smallest personal name wins."""
        user = self.get_user(user_id)
        with self._lock:
            reverse: dict[str, str] = {}
            for personal, canonical in sorted(user.aliases.items()):
                reverse.setdefault(canonical, personal)
            return reverse

    def set_preference(self, user_id: str, key: str, value: str) -> None:
        user = self.get_user(user_id)
        with self._lock:
            user.preferences[key] = value

    def users(self) -> list[str]:
        with self._lock:
            return sorted(self._users)

    def snapshot(self) -> dict:
        """The store contents in the same shape as the profile file."""
        with self._lock:
            return {
                "classes": [
                    {"class_id": c.class_id, "task_model_id": c.task_model_id,
                     "rights": sorted(c.rights)}
                    for c in self._classes.values()
                ],
                "users": [
                    {"user_id": u.user_id, "class_id": u.class_id,
                     "preferences": dict(u.preferences), "aliases": dict(u.aliases)}
                    for u in self._users.values()
                ],
            }


def _check_alias_map(user_id: str, aliases: dict[str, str]) -> None:
    targets = set(aliases.values())
    for personal, canonical in aliases.items():
        if canonical in aliases and canonical != personal:
            raise ProfileFormatError(
                f"user {user_id!r}: alias chain {personal!r} -> {canonical!r}")
        if personal in targets and personal != canonical:
            raise ProfileFormatError(
                f"user {user_id!r}: {personal!r} is both alias and target")
